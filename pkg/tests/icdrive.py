"""Drivers for the interpreter cache and tier-2 cache sites, with reference models."""
import random

from tieredvm import boxing
from tieredvm.guest.bytecodes import GET_IC, PUT_IC, make_get_ic, make_put_ic
from tieredvm.ic import InterpreterIC
from tieredvm.jit.icsite import MAX_STUBS
from tieredvm.runtime import Heap, prop_store
from tieredvm.vm import VM, VMConfig, shared_handlers

NAMES = [f"p{i}" for i in range(80)]


def _apply_uncached(desc, fns, obj, name, val):
    d = desc.body(obj, name)
    c = desc.concrete_for(d.effect, d.state)
    return fns[c.ordinal](obj, name, val, desc.payload_of(c, d.state))


def interp_ic_ops(n_ops=10_000, seed=0, n_objs=24):
    """Random property reads and writes through interpreter caches.

    The same op stream runs against a second heap with no caching (body
    always evaluated) and a plain dict model. Returns a summary dict.
    """
    rng = random.Random(seed)
    hs = shared_handlers()
    get_fns = hs.effect_fns[GET_IC.name]
    put_fns = hs.effect_fns[PUT_IC.name]
    heaps = [Heap(), Heap()]
    objs = [[h.get(h.new_table()) for _ in range(n_objs)] for h in heaps]
    names = [[h.intern(s) for s in NAMES] for h in heaps]
    model = [dict() for _ in range(n_objs)]
    # like a bytecode, every site has one fixed property name
    sites = []
    for ni in range(len(NAMES)):
        sites.append((InterpreterIC(GET_IC, get_fns), ni))
        sites.append((InterpreterIC(PUT_IC, put_fns), ni))
    out = {"mismatches": 0, "mono_violations": 0, "hits": 0, "misses": 0,
           "effect_switches": 0, "ops": 0, "quickened_sites": 0, "uncacheable": 0}
    # most objects start out with one shared shape
    for j in range(3, n_objs):
        for ni in range(8):
            v = boxing.d2w(float(ni))
            for h, o in zip(heaps, (objs[0][j], objs[1][j])):
                prop_store(h, o, h.intern(NAMES[ni]), v)
            model[j][NAMES[ni]] = v
    for _ in range(n_ops):
        j = rng.randrange(n_objs)
        # a few objects see every name and grow past the dictionary-mode limit
        if j < 3:
            k = rng.randrange(len(sites))
        else:
            k = rng.randrange(16) if rng.random() < 0.97 else rng.randrange(24)
        s, ni = sites[k]
        cached_obj = objs[0][j]
        plain_obj = objs[1][j]
        key = cached_obj.hc.id
        prev = s.key
        cacheable = s.desc.body(cached_obj, names[0][ni]).cacheable
        out["uncacheable"] += not cacheable
        if s.desc is GET_IC:
            got = s.execute(key, cached_obj, names[0][ni])
            want = _apply_uncached(GET_IC, get_fns, plain_obj, names[1][ni], None)
            expect = model[j].get(NAMES[ni], boxing.NIL)
            if got != want or got != expect:
                out["mismatches"] += 1
        else:
            v = boxing.d2w(float(rng.randrange(1000)))
            s.execute(key, cached_obj, names[0][ni], v)
            _apply_uncached(PUT_IC, put_fns, plain_obj, names[1][ni], v)
            model[j][NAMES[ni]] = v
        # one entry per slot: a cacheable op leaves its own key, anything else leaves the slot alone
        if (cacheable and s.key != key) or (not cacheable and s.key != prev):
            out["mono_violations"] += 1
        out["ops"] += 1
    for s, _ in sites:
        out["hits"] += s.hits
        out["misses"] += s.misses
        out["effect_switches"] += s.effect_switches
        out["quickened_sites"] += s.quickened is not None
    return out


# -- tier-2 site ---------------------------------------------------------------------

class SiteModel:
    """Reference for the slab/chain discipline: slab takes the first fitting entry,
    later entries are prepended to the chain, and the site stops growing at the cap."""

    def __init__(self, fits=lambda key: True, max_stubs=MAX_STUBS):
        self.slab = None
        self.chain = []
        self.mega = False
        self.fits = fits
        self.max_stubs = max_stubs
        self.misses = 0
        self.hits = 0

    def access(self, key):
        if key == self.slab or key in self.chain:
            self.hits += 1
            return
        self.misses += 1
        if self.mega:
            return
        if self.slab is None and self.fits(key):
            self.slab = key
            return
        self.chain.insert(0, key)
        if len(self.chain) >= self.max_stubs:
            self.mega = True

    def order(self):
        return ([self.slab] if self.slab is not None else []) + list(self.chain)


GETTER = "function get(o) return o.x end\n"


def make_shaped_objects(vm, n_classes):
    """One object per hidden class: a distinct leading property, then ``x``."""
    heap = vm.heap
    out = []
    for k in range(n_classes):
        w = heap.new_table()
        t = heap.get(w)
        prop_store(heap, t, heap.intern(f"lead{k}"), boxing.d2w(float(k)))
        prop_store(heap, t, heap.intern("x"), boxing.d2w(float(100 + k)))
        out.append(w)
    return out


def drive_jit_get_site(seq, n_classes):
    """Call a compiled getter with objects picked by ``seq``; returns (site, vm, objects, results)."""
    vm = VM(VMConfig(threshold=0))
    vm.run(GETTER)
    fn = vm.get_global("get")
    objs = make_shaped_objects(vm, n_classes)
    vm.baseline = vm.stats()
    results = []
    for k in seq:
        results.append(vm.call(fn, [objs[k]]))
    cb = vm.heap.get(fn).proto
    co = cb.co
    cells = [c for c, s in enumerate(co.sites) if s is not None and hasattr(s, "slab_key")]
    assert len(cells) == 1
    return co.sites[cells[0]], vm, objs, results


def class_key(vm, w):
    return vm.heap.get(w).hc.id


def fresh_descriptors():
    return make_get_ic("g_probe"), make_put_ic("p_probe")
