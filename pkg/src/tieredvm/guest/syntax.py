"""Lexer, AST and parser for the Lua-like guest language.

Names are resolved while parsing: every local gets a ``Var`` record that
later tells the code generator whether it is captured by an inner function
and whether it is ever reassigned (which decides how it is captured).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields


class GuestSyntaxError(Exception):
    def __init__(self, msg, line, col):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


KEYWORDS = {"and", "break", "do", "else", "elseif", "end", "false", "for", "function", "if",
            "in", "local", "nil", "not", "or", "repeat", "return", "then", "true", "until",
            "while"}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>--(?:\[(?P<ceq>=*)\[[\s\S]*?\](?P=ceq)\]|[^\n]*))
  | (?P<longstr>\[(?P<seq>=*)\[[\s\S]*?\](?P=seq)\])
  | (?P<num>0[xX][0-9a-fA-F]+|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\\n]|\\[\s\S])*"|'(?:[^'\\\n]|\\[\s\S])*')
  | (?P<op>\.\.\.|\.\.|==|~=|<=|>=|[-+*/%^\#<>=(){}\[\];:,.])
""", re.VERBOSE)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'", "a": "\a",
            "b": "\b", "f": "\f", "v": "\v", "\n": "\n", "0": "\0"}


@dataclass
class Token:
    kind: str          # "name", "kw", "num", "str", "op", "eof"
    value: object
    line: int
    col: int


def _unescape(body, line, col):
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        i += 1
        e = body[i]
        if e.isdigit():
            m = re.match(r"\d{1,3}", body[i:])
            v = int(m.group())
            if v > 255:
                raise GuestSyntaxError("decimal escape too large", line, col)
            out.append(chr(v))
            i += len(m.group())
        elif e in _ESCAPES:
            out.append(_ESCAPES[e])
            i += 1
        else:
            raise GuestSyntaxError(f"invalid escape sequence '\\{e}'", line, col)
    return "".join(out)


def tokenize(src):
    toks = []
    pos = 0
    line = 1
    line_start = 0
    n = len(src)
    while pos < n:
        m = _TOKEN.match(src, pos)
        col = pos - line_start + 1
        if m is None:
            raise GuestSyntaxError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind in ("ceq", "seq"):
            kind = "comment" if m.group("comment") else "longstr"
        if m.group("comment") is not None:
            kind = "comment"
        elif m.group("longstr") is not None:
            kind = "longstr"
        if kind == "num":
            v = float(int(text, 16)) if text[:2].lower() == "0x" else float(text)
            toks.append(Token("num", v, line, col))
        elif kind == "name":
            toks.append(Token("kw" if text in KEYWORDS else "name", text, line, col))
        elif kind == "str":
            toks.append(Token("str", _unescape(text[1:-1], line, col), line, col))
        elif kind == "longstr":
            k = text.index("[", 1) + 1
            body = text[k:len(text) - k]
            if body.startswith("\n"):
                body = body[1:]
            toks.append(Token("str", body, line, col))
        elif kind == "op":
            toks.append(Token("op", text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    toks.append(Token("eof", None, line, pos - line_start + 1))
    return toks


# -- AST ------------------------------------------------------------------------

@dataclass(eq=False)
class Var:
    name: str
    func: "FuncState"
    slot: int = None
    captured: bool = False
    assigned: bool = False
    is_function: bool = False      # bound by ``local function``


@dataclass
class Node:
    line: int = field(default=0, kw_only=True)


@dataclass
class Nil(Node):
    pass


@dataclass
class TrueLit(Node):
    pass


@dataclass
class FalseLit(Node):
    pass


@dataclass
class Number(Node):
    value: float


@dataclass
class String(Node):
    value: str


@dataclass
class VarArg(Node):
    pass


@dataclass
class LocalRef(Node):
    var: Var


@dataclass
class UpvalRef(Node):
    var: Var


@dataclass
class GlobalRef(Node):
    name: str


@dataclass
class Index(Node):
    obj: Node
    key: Node                      # a String key becomes a property access


@dataclass
class Call(Node):
    fn: Node
    args: list


@dataclass
class MethodCall(Node):
    obj: Node
    name: str
    args: list


@dataclass
class Function(Node):
    params: list                   # Vars
    is_vararg: bool
    body: list
    name: str = "?"
    upvals: list = field(default_factory=list)    # Vars captured from outside
    self_var: Var = None


@dataclass
class BinOp(Node):
    op: str
    lhs: Node
    rhs: Node


@dataclass
class UnOp(Node):
    op: str
    operand: Node


@dataclass
class TableCons(Node):
    items: list                    # ("pos", expr) | ("name", str, expr) | ("key", expr, expr)


@dataclass
class Local(Node):
    vars: list
    exprs: list


@dataclass
class LocalFunction(Node):
    var: Var
    func: Function


@dataclass
class Assign(Node):
    targets: list
    exprs: list


@dataclass
class CallStat(Node):
    call: Node


@dataclass
class Do(Node):
    body: list


@dataclass
class If(Node):
    arms: list                     # (cond, body)
    orelse: list = None


@dataclass
class While(Node):
    cond: Node
    body: list


@dataclass
class Repeat(Node):
    body: list
    cond: Node


@dataclass
class NumFor(Node):
    var: Var
    start: Node
    limit: Node
    step: Node
    body: list


@dataclass
class Return(Node):
    exprs: list


@dataclass
class Break(Node):
    pass


# -- parser --------------------------------------------------------------------------

class FuncState:
    def __init__(self, parent, node):
        self.parent = parent
        self.node = node
        self.scopes = [[]]

    def find_local(self, name):
        for scope in reversed(self.scopes):
            for v in reversed(scope):
                if v.name == name:
                    return v
        return None


BINARY_PRIORITY = {
    "or": (1, 1), "and": (2, 2),
    "<": (3, 3), ">": (3, 3), "<=": (3, 3), ">=": (3, 3), "~=": (3, 3), "==": (3, 3),
    "..": (9, 8),                  # right associative
    "+": (10, 10), "-": (10, 10),
    "*": (11, 11), "/": (11, 11), "%": (11, 11),
}
UNARY_PRIORITY = 12


class Parser:
    def __init__(self, src):
        self.toks = tokenize(src)
        self.i = 0
        self.fs = None

    # token helpers
    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        t = tok or self.tok
        raise GuestSyntaxError(msg, t.line, t.col)

    def check(self, kind, value=None):
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def check_op(self, value):
        return self.check("op", value)

    def check_kw(self, value):
        return self.check("kw", value)

    def accept(self, kind, value=None):
        if self.check(kind, value):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, kind, value=None, what=None):
        t = self.accept(kind, value)
        if t is None:
            got = self.tok.value if self.tok.kind != "eof" else "<eof>"
            self.error(f"expected {what or value or kind} near {got!r}")
        return t

    def expect_match(self, value, opener, line):
        if not self.accept("kw" if value.isalpha() else "op", value):
            got = self.tok.value if self.tok.kind != "eof" else "<eof>"
            where = f" (to close {opener!r} at line {line})" if line != self.tok.line else ""
            self.error(f"expected {value!r}{where} near {got!r}")

    # scopes
    def declare(self, name):
        v = Var(name, self.fs)
        self.fs.scopes[-1].append(v)
        return v

    def resolve(self, name, line):
        fs = self.fs
        v = fs.find_local(name)
        if v is not None:
            return LocalRef(v, line=line)
        f = fs.parent
        while f is not None:
            v = f.find_local(name)
            if v is not None:
                v.captured = True
                g = fs
                while g is not f:
                    if v not in g.node.upvals:
                        g.node.upvals.append(v)
                    g = g.parent
                return UpvalRef(v, line=line)
            f = f.parent
        return GlobalRef(name, line=line)

    # entry
    def parse_chunk(self):
        main = Function([], True, [], name="main")
        self.fs = FuncState(None, main)
        main.body = self.block()
        if not self.check("eof"):
            self.error(f"unexpected {self.tok.value!r}")
        return main

    def block(self):
        stats = []
        while True:
            if self.check("eof") or self.check_kw("end") or self.check_kw("else") \
                    or self.check_kw("elseif") or self.check_kw("until"):
                return stats
            if self.check_kw("return"):
                stats.append(self.return_stat())
                return stats
            s = self.statement()
            if s is not None:
                stats.append(s)

    def scoped_block(self):
        self.fs.scopes.append([])
        b = self.block()
        self.fs.scopes.pop()
        return b

    def return_stat(self):
        line = self.expect("kw", "return").line
        exprs = []
        if not (self.check("eof") or self.check_kw("end") or self.check_kw("else")
                or self.check_kw("elseif") or self.check_kw("until") or self.check_op(";")):
            exprs = self.exprlist()
        self.accept("op", ";")
        return Return(exprs, line=line)

    def statement(self):
        t = self.tok
        line = t.line
        if self.accept("op", ";"):
            return None
        if t.kind == "kw":
            if t.value == "if":
                return self.if_stat()
            if t.value == "while":
                self.i += 1
                cond = self.expr()
                self.expect("kw", "do")
                body = self.scoped_block()
                self.expect_match("end", "while", line)
                return While(cond, body, line=line)
            if t.value == "do":
                self.i += 1
                body = self.scoped_block()
                self.expect_match("end", "do", line)
                return Do(body, line=line)
            if t.value == "for":
                return self.for_stat()
            if t.value == "repeat":
                self.i += 1
                self.fs.scopes.append([])
                body = self.block()
                self.expect_match("until", "repeat", line)
                cond = self.expr()
                self.fs.scopes.pop()
                return Repeat(body, cond, line=line)
            if t.value == "function":
                return self.function_stat()
            if t.value == "local":
                self.i += 1
                if self.accept("kw", "function"):
                    name = self.expect("name").value
                    v = self.declare(name)
                    v.is_function = True
                    f = self.funcbody(line, name, v)
                    return LocalFunction(v, f, line=line)
                names = [self.expect("name").value]
                while self.accept("op", ","):
                    names.append(self.expect("name").value)
                exprs = self.exprlist() if self.accept("op", "=") else []
                vs = [Var(n, self.fs) for n in names]
                self.fs.scopes[-1].extend(vs)
                return Local(vs, exprs, line=line)
            if t.value == "break":
                self.i += 1
                return Break(line=line)
        e = self.suffixed()
        if self.check_op("=") or self.check_op(","):
            targets = [e]
            while self.accept("op", ","):
                targets.append(self.suffixed())
            self.expect("op", "=")
            exprs = self.exprlist()
            for tgt in targets:
                self.mark_assigned(tgt)
            return Assign(targets, exprs, line=line)
        if not isinstance(e, (Call, MethodCall)):
            self.error("syntax error: expression is not a statement", t)
        return CallStat(e, line=line)

    def mark_assigned(self, tgt):
        if isinstance(tgt, (LocalRef, UpvalRef)):
            tgt.var.assigned = True
        elif not isinstance(tgt, (GlobalRef, Index)):
            self.error("cannot assign to this expression")

    def if_stat(self):
        line = self.expect("kw", "if").line
        arms = []
        cond = self.expr()
        self.expect("kw", "then")
        arms.append((cond, self.scoped_block()))
        orelse = None
        while True:
            if self.accept("kw", "elseif"):
                cond = self.expr()
                self.expect("kw", "then")
                arms.append((cond, self.scoped_block()))
            elif self.accept("kw", "else"):
                orelse = self.scoped_block()
                self.expect_match("end", "if", line)
                break
            else:
                self.expect_match("end", "if", line)
                break
        return If(arms, orelse, line=line)

    def for_stat(self):
        line = self.expect("kw", "for").line
        name = self.expect("name").value
        if not self.check_op("="):
            self.error("only numeric for loops are supported")
        self.i += 1
        start = self.expr()
        self.expect("op", ",")
        limit = self.expr()
        step = self.expr() if self.accept("op", ",") else None
        self.expect("kw", "do")
        self.fs.scopes.append([])
        v = self.declare(name)
        body = self.block()
        self.fs.scopes.pop()
        self.expect_match("end", "for", line)
        return NumFor(v, start, limit, step, body, line=line)

    def function_stat(self):
        line = self.expect("kw", "function").line
        n = self.expect("name")
        target = self.resolve(n.value, n.line)
        full = n.value
        is_method = False
        while self.check_op(".") or self.check_op(":"):
            sep = self.tok.value
            self.i += 1
            key = self.expect("name").value
            full += sep + key
            target = Index(target, String(key), line=line)
            if sep == ":":
                is_method = True
                break
        f = self.funcbody(line, full, None, is_method)
        self.mark_assigned(target)
        return Assign([target], [f], line=line)

    def funcbody(self, line, name, self_var=None, is_method=False):
        f = Function([], False, [], name=name, line=line, self_var=self_var)
        parent = self.fs
        self.fs = FuncState(parent, f)
        if is_method:
            f.params.append(self.declare("self"))
        self.expect("op", "(")
        if not self.check_op(")"):
            while True:
                if self.accept("op", "..."):
                    f.is_vararg = True
                    break
                f.params.append(self.declare(self.expect("name").value))
                if not self.accept("op", ","):
                    break
        self.expect("op", ")")
        f.body = self.block()
        self.expect_match("end", "function", line)
        self.fs = parent
        return f

    def exprlist(self):
        out = [self.expr()]
        while self.accept("op", ","):
            out.append(self.expr())
        return out

    def primary(self):
        t = self.tok
        if t.kind == "name":
            self.i += 1
            return self.resolve(t.value, t.line)
        if self.accept("op", "("):
            e = self.expr()
            self.expect_match(")", "(", t.line)
            # parentheses truncate multiple results to one
            return BinOp("paren", e, None, line=t.line) if isinstance(e, (Call, MethodCall, VarArg)) else e
        self.error(f"unexpected symbol near {t.value!r}" if t.kind != "eof" else "unexpected <eof>")

    def suffixed(self):
        e = self.primary()
        while True:
            t = self.tok
            if self.accept("op", "."):
                e = Index(e, String(self.expect("name").value), line=t.line)
            elif self.accept("op", "["):
                k = self.expr()
                self.expect("op", "]")
                e = Index(e, k, line=t.line)
            elif self.accept("op", ":"):
                name = self.expect("name").value
                e = MethodCall(e, name, self.call_args(), line=t.line)
            elif self.check_op("(") or self.check_op("{") or self.check("str"):
                e = Call(e, self.call_args(), line=t.line)
            else:
                return e

    def call_args(self):
        t = self.tok
        if t.kind == "str":
            self.i += 1
            return [String(t.value, line=t.line)]
        if self.check_op("{"):
            return [self.table()]
        self.expect("op", "(")
        if self.accept("op", ")"):
            return []
        args = self.exprlist()
        self.expect_match(")", "(", t.line)
        return args

    def table(self):
        line = self.expect("op", "{").line
        items = []
        while not self.check_op("}"):
            if self.accept("op", "["):
                k = self.expr()
                self.expect("op", "]")
                self.expect("op", "=")
                items.append(("key", k, self.expr()))
            elif self.check("name") and self.toks[self.i + 1].kind == "op" \
                    and self.toks[self.i + 1].value == "=":
                name = self.tok.value
                self.i += 2
                items.append(("name", name, self.expr()))
            else:
                items.append(("pos", self.expr()))
            if not (self.accept("op", ",") or self.accept("op", ";")):
                break
        self.expect_match("}", "{", line)
        return TableCons(items, line=line)

    def simple(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Number(t.value, line=t.line)
        if t.kind == "str":
            self.i += 1
            return String(t.value, line=t.line)
        if t.kind == "kw":
            if t.value == "nil":
                self.i += 1
                return Nil(line=t.line)
            if t.value == "true":
                self.i += 1
                return TrueLit(line=t.line)
            if t.value == "false":
                self.i += 1
                return FalseLit(line=t.line)
            if t.value == "function":
                self.i += 1
                return self.funcbody(t.line, "anonymous")
        if self.accept("op", "..."):
            if not self.fs.node.is_vararg:
                self.error("cannot use '...' outside a vararg function", t)
            return VarArg(line=t.line)
        if self.check_op("{"):
            return self.table()
        return self.suffixed()

    def expr(self, limit=0):
        t = self.tok
        if (t.kind == "kw" and t.value == "not") or (t.kind == "op" and t.value in ("-", "#")):
            self.i += 1
            operand = self.expr(UNARY_PRIORITY)
            if t.value == "-" and isinstance(operand, Number):
                e = Number(-operand.value, line=t.line)
            else:
                e = UnOp(t.value, operand, line=t.line)
        else:
            e = self.simple()
        while True:
            t = self.tok
            op = t.value if t.kind in ("op", "kw") else None
            pri = BINARY_PRIORITY.get(op)
            if pri is None or pri[0] <= limit:
                return e
            self.i += 1
            rhs = self.expr(pri[1])
            e = BinOp(op, e, rhs, line=t.line)


def parse(src):
    return Parser(src).parse_chunk()


def dump_ast(node, indent=0):
    """Deterministic indented text for an AST; variables print as name plus flags."""
    pad = "  " * indent
    if isinstance(node, list):
        return "".join(dump_ast(n, indent) for n in node)
    if isinstance(node, Var):
        flags = [f for f in ("captured", "assigned", "is_function") if getattr(node, f)]
        return f"{pad}var {node.name}" + (" [" + ",".join(flags) + "]" if flags else "") + "\n"
    if not isinstance(node, Node):
        return f"{pad}{node!r}\n"
    out = [f"{pad}{type(node).__name__}"]
    scalars = []
    children = []
    for f in fields(node):
        if f.name == "line":
            continue
        v = getattr(node, f.name)
        if isinstance(v, (Node, Var)) or (isinstance(v, list) and v
                                          and not isinstance(v[0], str)):
            children.append((f.name, v))
        elif isinstance(v, list) and not v:
            continue
        elif v is not None:
            scalars.append(f"{f.name}={v!r}")
    out.append(" " + " ".join(scalars) if scalars else "")
    text = "".join(out) + "\n"
    for name, v in children:
        text += f"{pad}  .{name}\n"
        if isinstance(v, list):
            for item in v:
                if isinstance(item, tuple) and isinstance(item[0], str):
                    text += f"{pad}    ({item[0]})\n"
                    text += "".join(dump_ast(x, indent + 3) for x in item[1:])
                elif isinstance(item, tuple):
                    text += f"{pad}    (arm)\n"
                    text += "".join(dump_ast(x, indent + 3) for x in item)
                else:
                    text += dump_ast(item, indent + 2)
        else:
            text += dump_ast(v, indent + 2)
    return text
