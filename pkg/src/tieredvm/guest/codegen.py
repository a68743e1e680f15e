"""Lower a parsed guest program to bytecode through the builder."""
from __future__ import annotations

from ..boxing import FALSE, NIL, TRUE, d2w
from ..bytecode import MAX_LOCAL, BytecodeBuilder, Cst, Loc
from ..interpreter import (HEADER, UV_LOCAL, UV_LOCAL_IMMUTABLE, UV_PARENT, UV_SELF, VARRES,
                           CodeBlock)
from . import syntax as A

ARITH_KINDS = {"+": "Add", "-": "Sub", "*": "Mul", "/": "Div", "%": "Mod"}
# comparison -> (bytecode suffix, swap operands)
COMPARE_KINDS = {"<": ("Lt", False), "<=": ("Le", False), ">": ("Lt", True), ">=": ("Le", True),
                 "==": ("Eq", False), "~=": ("Eq", False)}
SETLIST_BATCH = 50


class CodegenError(Exception):
    def __init__(self, msg, line=0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


def _multi(e):
    return isinstance(e, (A.Call, A.MethodCall, A.VarArg))


def _direct_ok(e):
    """True if ``e`` reads all its inputs before writing its destination slot."""
    if isinstance(e, A.BinOp):
        return e.op not in ("and", "or", "paren")
    return isinstance(e, (A.Nil, A.TrueLit, A.FalseLit, A.Number, A.String, A.VarArg,
                          A.LocalRef, A.UpvalRef, A.GlobalRef, A.Index, A.Function, A.UnOp))


class FuncGen:
    def __init__(self, cg, node, parent):
        self.cg = cg
        self.node = node
        self.parent = parent
        self.b = BytecodeBuilder(cg.registry)
        self.free = 0
        self.max = 0
        self.protos = []
        self.uv_index = {}
        self.uv_desc = []
        self.blocks = []           # per open block: list of declared Vars
        self.loops = []            # per open loop: (break positions, blocks depth at entry, body base)

    # registers ------------------------------------------------------------------------
    def alloc(self, n=1):
        r = self.free
        self.free += n
        if self.free > self.max:
            if self.free > MAX_LOCAL - HEADER:
                raise CodegenError("too many local variables or temporaries in function",
                                   self.node.line)
            self.max = self.free
        return r

    def declare(self, var, slot):
        var.slot = slot
        self.blocks[-1].append(var)

    def emit(self, kind, **kw):
        return self.b.emit(kind, **kw)

    def const(self, w):
        return Cst(w)

    def string(self, s):
        return Cst(self.cg.heap.intern(s))

    def here(self):
        return self.b.get_cur_length()

    def patch(self, positions, target=None):
        t = self.here() if target is None else target
        for p in positions:
            self.b.set_branch_target(p, t)

    # upvalues --------------------------------------------------------------------------
    def upval(self, var):
        i = self.uv_index.get(var)
        if i is not None:
            return i
        parent = self.parent
        if var.func.node is parent.node:
            if var is self.node.self_var and not var.assigned:
                desc = (UV_SELF, 0)
            elif var.assigned:
                desc = (UV_LOCAL, var.slot)
            else:
                desc = (UV_LOCAL_IMMUTABLE, var.slot)
        else:
            desc = (UV_PARENT, parent.upval(var))
        i = len(self.uv_desc)
        self.uv_desc.append(desc)
        self.uv_index[var] = i
        return i

    # blocks ----------------------------------------------------------------------------
    def open_block(self):
        self.blocks.append([])
        return self.free

    def close_block(self, saved_free, emit_close=True):
        vars_ = self.blocks.pop()
        if emit_close:
            lowest = [v.slot for v in vars_ if v.captured and v.assigned]
            if lowest:
                self.emit("UpvalueClose", base=Loc(min(lowest)))
        self.free = saved_free

    def block(self, stats):
        saved = self.open_block()
        for s in stats:
            self.stat(s)
        self.close_block(saved)

    # functions -------------------------------------------------------------------------
    def function_body(self):
        node = self.node
        self.blocks.append([])
        for p in node.params:
            self.declare(p, self.alloc())
        for s in node.body:
            self.stat(s)
        if not node.body or not isinstance(node.body[-1], A.Return):
            self.emit("Return", base=Loc(0), n=0)
        stream = self.b.build()
        descs = [None] * stream.ic_count
        for pos in stream.starts:
            d = stream.decode(pos)
            if d.ic is not None:
                descs[d.ic] = d.info.defn.ic
        return CodeBlock(stream, len(node.params), node.is_vararg, self.max + 1,
                         self.protos, self.uv_desc, node.name, node.line, descs)

    def closure(self, fnode, dest):
        child = FuncGen(self.cg, fnode, self)
        proto = child.function_body()
        self.protos.append(proto)
        self.emit("CreateClosure", proto=len(self.protos) - 1, out=Loc(dest))

    # expressions ----------------------------------------------------------------------
    def operand(self, e):
        """A Loc or Cst naming the value of ``e`` without copying locals."""
        if isinstance(e, A.Number):
            return self.const(d2w(e.value))
        if isinstance(e, A.String):
            return self.string(e.value)
        if isinstance(e, A.Nil):
            return self.const(NIL)
        if isinstance(e, A.TrueLit):
            return self.const(TRUE)
        if isinstance(e, A.FalseLit):
            return self.const(FALSE)
        return self.reg(e)

    def reg(self, e):
        """A Loc holding the value of ``e``."""
        if isinstance(e, A.LocalRef):
            return Loc(e.var.slot)
        r = self.alloc()
        self.expr_to(e, r)
        return Loc(r)

    def local_operands(self, a, b):
        """Operands for a two-input kind; at least one side is kept in a local."""
        x = self.operand(a)
        y = self.operand(b)
        if isinstance(x, Cst) and isinstance(y, Cst):
            r = self.alloc()
            self.emit("LoadConstant", value=x, out=Loc(r))
            x = Loc(r)
        return x, y

    def expr_to(self, e, dest):
        saved = self.free
        out = Loc(dest)
        if isinstance(e, (A.Nil, A.TrueLit, A.FalseLit, A.Number, A.String)):
            self.emit("LoadConstant", value=self.operand(e), out=out)
        elif isinstance(e, A.VarArg):
            self.emit("VarArgsCopy", base=out, n=1)
        elif isinstance(e, A.LocalRef):
            if e.var.slot != dest:
                self.emit("Move", src=Loc(e.var.slot), out=out)
        elif isinstance(e, A.UpvalRef):
            imm = 0 if e.var.assigned else 1
            self.emit("UpvalueGet", ord=self.upval(e.var), imm=imm, out=out)
        elif isinstance(e, A.GlobalRef):
            self.emit("GetGlobal", name=self.string(e.name), out=out)
        elif isinstance(e, A.Index):
            obj = self.reg(e.obj)
            if isinstance(e.key, A.String):
                self.emit("GetById", obj=obj, name=self.string(e.key.value), out=out)
            else:
                self.emit("GetByVal", obj=obj, key=self.operand(e.key), out=out)
        elif isinstance(e, (A.Call, A.MethodCall)):
            if dest == self.free - 1:
                self.free = dest
                self.call(e, 1, dest)
            else:
                c = self.call(e, 1)
                self.emit("Move", src=Loc(c), out=out)
        elif isinstance(e, A.Function):
            self.closure(e, dest)
        elif isinstance(e, A.TableCons):
            self.table(e, dest)
        elif isinstance(e, A.UnOp):
            self.unop(e, dest)
        elif isinstance(e, A.BinOp):
            self.binop(e, dest)
        else:
            raise CodegenError(f"cannot compile {type(e).__name__}", e.line)
        self.free = saved

    def unop(self, e, dest):
        out = Loc(dest)
        if e.op == "-":
            x = self.operand(e.operand)
            if isinstance(x, Cst):
                x = self.reg(e.operand)
            self.emit("Mul", lhs=x, rhs=self.const(d2w(-1.0)), out=out)
        elif e.op == "not":
            self.emit("Not", src=self.reg(e.operand), out=out)
        elif e.op == "#":
            self.emit("Len", src=self.reg(e.operand), out=out)
        else:
            raise CodegenError(f"unknown unary operator {e.op}", e.line)

    def binop(self, e, dest):
        op = e.op
        out = Loc(dest)
        if op == "paren":
            self.expr_to(e.lhs, dest)
        elif op in ARITH_KINDS:
            x, y = self.local_operands(e.lhs, e.rhs)
            self.emit(ARITH_KINDS[op], lhs=x, rhs=y, out=out)
        elif op == "..":
            x, y = self.local_operands(e.lhs, e.rhs)
            self.emit("Concat", lhs=x, rhs=y, out=out)
        elif op in COMPARE_KINDS:
            jumps = self.cond_jump(e, True)
            self.emit("LoadConstant", value=self.const(FALSE), out=out)
            j = self.emit("Jump", loop=0)
            self.patch(jumps)
            self.emit("LoadConstant", value=self.const(TRUE), out=out)
            self.patch([j])
        elif op in ("and", "or"):
            self.expr_to(e.lhs, dest)
            j = self.emit("BranchIfFalsy" if op == "and" else "BranchIfTruthy", cond=out)
            self.expr_to(e.rhs, dest)
            self.patch([j])
        else:
            raise CodegenError(f"unknown operator {op}", e.line)

    def cond_jump(self, e, sense):
        """Emit branches taken when ``e``'s truthiness equals ``sense``; returns them unpatched."""
        if isinstance(e, (A.Nil, A.FalseLit, A.TrueLit, A.Number, A.String)):
            truthy = not isinstance(e, (A.Nil, A.FalseLit))
            return [self.emit("Jump", loop=0)] if truthy == sense else []
        if isinstance(e, A.UnOp) and e.op == "not":
            return self.cond_jump(e.operand, not sense)
        if isinstance(e, A.BinOp):
            if e.op == "paren":
                return self.cond_jump(e.lhs, sense)
            if e.op in COMPARE_KINDS:
                saved = self.free
                kind, swap = COMPARE_KINDS[e.op]
                a, b = (e.rhs, e.lhs) if swap else (e.lhs, e.rhs)
                x, y = self.local_operands(a, b)
                positive = sense if e.op != "~=" else not sense
                name = f"BranchIf{'' if positive else 'Not'}{kind}"
                p = self.emit(name, lhs=x, rhs=y)
                self.free = saved
                return [p]
            if e.op in ("and", "or"):
                short = e.op == "or"       # "or" short-circuits on truthy
                if sense == short:
                    return self.cond_jump(e.lhs, sense) + self.cond_jump(e.rhs, sense)
                skip = self.cond_jump(e.lhs, short)
                out = self.cond_jump(e.rhs, sense)
                self.patch(skip)
                return out
        saved = self.free
        r = self.reg(e)
        p = self.emit("BranchIfTruthy" if sense else "BranchIfFalsy", cond=r)
        self.free = saved
        return [p]

    def table(self, e, dest):
        out = Loc(dest)
        self.emit("NewTable", out=out)
        pending = []
        first = 1
        items = e.items
        last_pos = max((k for k, it in enumerate(items) if it[0] == "pos"), default=-1)
        for k, item in enumerate(items):
            if item[0] == "pos":
                if k == last_pos and _multi(item[1]):
                    start = pending[0] if pending else self.free
                    self.multi_to_varres(item[1])
                    self.emit("SetListVarRes", tab=out, base=Loc(start), n=len(pending),
                              first=first)
                    pending = []
                    self.free = start
                    continue
                r = self.alloc()
                self.expr_to(item[1], r)
                pending.append(r)
                if len(pending) == SETLIST_BATCH:
                    self.emit("SetList", tab=out, base=Loc(pending[0]), n=len(pending), first=first)
                    first += len(pending)
                    self.free = pending[0]
                    pending = []
            elif item[0] == "name":
                saved = self.free
                self.emit("SetById", obj=out, name=self.string(item[1]), val=self.operand(item[2]))
                self.free = saved
            else:
                saved = self.free
                k_ = self.operand(item[1])
                v = self.operand(item[2])
                self.emit("SetByVal", obj=out, key=k_, val=v)
                self.free = saved
        if pending:
            self.emit("SetList", tab=out, base=Loc(pending[0]), n=len(pending), first=first)
            self.free = pending[0]

    def multi_to_varres(self, e):
        """Leave every value of a call or ``...`` as variadic results."""
        if isinstance(e, A.VarArg):
            self.emit("VarArgsToVarRes")
        else:
            self.call(e, VARRES)

    def args_into(self, args, start):
        """Evaluate ``args`` into consecutive slots from ``start``; returns (fixed count, varres)."""
        n = 0
        for k, a in enumerate(args):
            if k == len(args) - 1 and _multi(a):
                self.multi_to_varres(a)
                return n, True
            r = self.alloc()
            assert r == start + n
            self.expr_to(a, r)
            n += 1
        return n, False

    def call_prologue(self, e, c):
        """Place the callee (and ``self``) and the arguments; returns (fixed args, varres)."""
        self.free = c
        self.alloc(HEADER)
        if isinstance(e, A.MethodCall):
            r = self.alloc()
            self.expr_to(e.obj, r)
            self.emit("GetById", obj=Loc(r), name=self.string(e.name), out=Loc(c))
            n, vr = self.args_into(e.args, c + HEADER + 1)
            return n + 1, vr
        self.expr_to(e.fn, c)
        return self.args_into(e.args, c + HEADER)

    def call(self, e, nrets, c=None):
        if c is None:
            c = self.free
        nargs, vr = self.call_prologue(e, c)
        self.emit("CallVarRes" if vr else "Call", base=Loc(c), nargs=nargs, nrets=nrets)
        self.free = c + (nrets if nrets != VARRES else 0)
        if self.free > self.max:
            self.max = self.free
        return c

    # statements -----------------------------------------------------------------------
    def stat(self, s):
        method = getattr(self, "stat_" + type(s).__name__)
        method(s)

    def stat_Local(self, s):
        base = self.free
        nv = len(s.vars)
        self.values_into(s.exprs, nv, base)
        for k, v in enumerate(s.vars):
            self.declare(v, base + k)
        self.free = base + nv

    def values_into(self, exprs, n, base):
        """Evaluate ``exprs`` adjusted to exactly ``n`` values in slots base..base+n-1."""
        for k, e in enumerate(exprs):
            last = k == len(exprs) - 1
            if k >= n:
                saved = self.free
                if isinstance(e, (A.Call, A.MethodCall)):
                    self.call(e, 0)
                elif not isinstance(e, A.VarArg):
                    self.reg(e)
                self.free = saved
                continue
            if last and _multi(e) and n - k > 1:
                if isinstance(e, A.VarArg):
                    self.alloc(n - k)
                    self.emit("VarArgsCopy", base=Loc(base + k), n=n - k)
                else:
                    self.free = base + k
                    self.call(e, n - k, base + k)
                return
            r = self.alloc()
            self.expr_to(e, r)
        for k in range(len(exprs), n):
            r = self.alloc()
            self.emit("LoadConstant", value=self.const(NIL), out=Loc(r))

    def stat_LocalFunction(self, s):
        slot = self.alloc()
        self.declare(s.var, slot)
        self.closure(s.func, slot)

    def store(self, target, v):
        if isinstance(target, A.LocalRef):
            slot = target.var.slot
            if isinstance(v, Cst):
                self.emit("LoadConstant", value=v, out=Loc(slot))
            elif v.slot != slot:
                self.emit("Move", src=v, out=Loc(slot))
        elif isinstance(target, A.UpvalRef):
            self.emit("UpvaluePut", ord=self.upval(target.var), val=v)
        elif isinstance(target, A.GlobalRef):
            self.emit("SetGlobal", name=self.string(target.name), val=v)
        else:
            obj = self.reg(target.obj)
            if isinstance(target.key, A.String):
                self.emit("SetById", obj=obj, name=self.string(target.key.value), val=v)
            else:
                self.emit("SetByVal", obj=obj, key=self.operand(target.key), val=v)

    def stat_Assign(self, s):
        saved = self.free
        if len(s.targets) == 1 and len(s.exprs) == 1:
            t, e = s.targets[0], s.exprs[0]
            if isinstance(t, A.LocalRef) and _direct_ok(e):
                self.expr_to(e, t.var.slot)
            else:
                self.store(t, self.operand(e) if not _multi(e) else self.reg(e))
            self.free = saved
            return
        base = self.free
        n = len(s.targets)
        self.values_into(s.exprs, n, base)
        self.free = base + n
        for k, t in enumerate(s.targets):
            self.store(t, Loc(base + k))
        self.free = saved

    def stat_CallStat(self, s):
        saved = self.free
        self.call(s.call, 0)
        self.free = saved

    def stat_Do(self, s):
        self.block(s.body)

    def stat_If(self, s):
        ends = []
        for k, (cond, body) in enumerate(s.arms):
            skip = self.cond_jump(cond, False)
            self.block(body)
            if k < len(s.arms) - 1 or s.orelse is not None:
                ends.append(self.emit("Jump", loop=0))
            self.patch(skip)
        if s.orelse is not None:
            self.block(s.orelse)
        self.patch(ends)

    def loop_body(self, stats, brk):
        saved = self.open_block()
        self.loops.append((brk, len(self.blocks), saved))
        for st in stats:
            self.stat(st)
        self.loops.pop()
        self.close_block(saved)

    def stat_While(self, s):
        top = self.here()
        exits = self.cond_jump(s.cond, False)
        brk = []
        self.loop_body(s.body, brk)
        self.emit("Jump", loop=1, target=top)
        self.patch(exits + brk)

    def stat_Repeat(self, s):
        top = self.here()
        brk = []
        saved = self.open_block()
        self.loops.append((brk, len(self.blocks), saved))
        for st in s.body:
            self.stat(st)
        self.loops.pop()
        vars_ = self.blocks[-1]
        captured = [v.slot for v in vars_ if v.captured and v.assigned]
        if captured:
            r = self.reg(s.cond)
            self.emit("UpvalueClose", base=Loc(min(captured)))
            done = [self.emit("BranchIfTruthy", cond=r)]
        else:
            done = self.cond_jump(s.cond, True)
        self.close_block(saved, emit_close=False)
        self.emit("Jump", loop=1, target=top)
        self.patch(done + brk)

    def stat_NumFor(self, s):
        saved = self.free
        idx, lim, step = self.alloc(), self.alloc(), self.alloc()
        self.expr_to(s.start, idx)
        self.expr_to(s.limit, lim)
        const_step = None
        if s.step is None:
            const_step = 1.0
        elif isinstance(s.step, A.Number):
            const_step = s.step.value
        if const_step is None:
            self.expr_to(s.step, step)
            step_op = Loc(step)
        else:
            step_op = self.const(d2w(const_step))
        top = self.here()
        if const_step is None:
            to_pos = self.emit("BranchIfLt", lhs=self.const(d2w(0.0)), rhs=Loc(step))
            exits = [self.emit("BranchIfNotLe", lhs=Loc(lim), rhs=Loc(idx))]
            to_body = self.emit("Jump", loop=0)
            self.patch([to_pos])
            exits.append(self.emit("BranchIfNotLe", lhs=Loc(idx), rhs=Loc(lim)))
            self.patch([to_body])
        elif const_step > 0:
            exits = [self.emit("BranchIfNotLe", lhs=Loc(idx), rhs=Loc(lim))]
        else:
            exits = [self.emit("BranchIfNotLe", lhs=Loc(lim), rhs=Loc(idx))]
        brk = []
        body_saved = self.open_block()
        self.loops.append((brk, len(self.blocks), body_saved))
        v = self.alloc()
        self.declare(s.var, v)
        self.emit("Move", src=Loc(idx), out=Loc(v))
        for st in s.body:
            self.stat(st)
        self.loops.pop()
        self.close_block(body_saved)
        self.emit("Add", lhs=Loc(idx), rhs=step_op, out=Loc(idx))
        self.emit("Jump", loop=1, target=top)
        self.patch(exits + brk)
        self.free = saved

    def stat_Break(self, s):
        if not self.loops:
            raise CodegenError("break outside a loop", s.line)
        brk, depth, _ = self.loops[-1]
        slots = [v.slot for blk in self.blocks[depth - 1:] for v in blk
                 if v.captured and v.assigned]
        if slots:
            self.emit("UpvalueClose", base=Loc(min(slots)))
        brk.append(self.emit("Jump", loop=0))

    def stat_Return(self, s):
        saved = self.free
        exprs = s.exprs
        if len(exprs) == 1 and isinstance(exprs[0], (A.Call, A.MethodCall)):
            c = self.free
            nargs, vr = self.call_prologue(exprs[0], c)
            self.emit("TailCallVarRes" if vr else "TailCall", base=Loc(c), nargs=nargs)
        elif not exprs:
            self.emit("Return", base=Loc(0), n=0)
        elif len(exprs) == 1 and isinstance(exprs[0], A.LocalRef):
            self.emit("Return", base=Loc(exprs[0].var.slot), n=1)
        else:
            base = self.free
            n, vr = self.args_into(exprs, base)
            if vr:
                self.emit("ReturnVarRes", base=Loc(base), n=n)
            else:
                self.emit("Return", base=Loc(base), n=n)
        self.free = saved


class Codegen:
    def __init__(self, registry, heap):
        self.registry = registry
        self.heap = heap

    def compile(self, main):
        return FuncGen(self, main, None).function_body()


def compile_source(src, registry, heap):
    """Parse and lower ``src``; returns the main CodeBlock."""
    return Codegen(registry, heap).compile(A.parse(src))
