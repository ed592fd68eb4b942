"""Workload generators.

Each generator turns a parameter record into placed data buffers, per-PE
programs, and a verification callback, for either data-movement mode
(``copy`` or ``svm``).  Generators are deterministic functions of
(machine, spec, mode) — all randomness comes from seeded generators.

The four workloads:

* ``matmul``   — blocked GEMM (C += A·B).  Row tiles of A and C are
  distributed over clusters; each cluster streams column panels of B
  through its SPM with double buffering, recomputing one P×8 block of C
  per step (P = PEs per cluster, one C row per PE).  Panels arrive in
  halves so compute can start after the first half.
* ``memcopy``  — bulk copy through the cluster SPMs, chunk by chunk, with
  get/put double buffering.
* ``pagerank`` — fixed-iteration pull-based ranking over linked node
  records that embed the virtual addresses of their in-neighbors.  The
  rank vector is mirrored into each cluster's SPM once per iteration.
* ``forest``   — decision-forest inference.  Trees live in a sparse arena
  many times larger than the paths any input actually touches; each
  input chases pointers from root to leaf.

Compute costs are charged as Compute(cycles) ops; the functional payload
(actual arithmetic on the bytes the DMAs moved) runs in the ops'
completion callbacks and doubles as a correctness oracle: callbacks
verify that staged SPM bytes match expectation before using them.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from .cluster import (Barrier, Compute, DmaGet, DmaPut, End, LoadSpm, LoadVA,
                      StoreSpm, StoreVA, WaitDma)
from .machine import Machine
from .memory import PAGE_SHIFT
from .offload import DataArg, OffloadDescriptor, RunReport, place_arg


@dataclass
class MatmulSpec:
    n: int = 48
    mac_cycles: int = 1        # cycles charged per multiply-accumulate


@dataclass
class MemcopySpec:
    nbytes: int = 1 << 20
    chunk: int = 32 << 10


@dataclass
class LdsGraphSpec:
    nodes: int = 2048
    edges_per_node: int = 8
    node_bytes: int = 64
    iterations: int = 12


@dataclass
class ForestSpec:
    trees: int = 4
    depth: int = 15            # nodes on a root-to-leaf path
    node_bytes: int = 32
    inputs: int = 32
    spread: int = 6            # arena footprint / packed footprint


@dataclass
class Benchmark:
    name: str
    mode: str
    descriptor: OffloadDescriptor
    programs: dict
    verify: object             # callable(report) -> None, raises AssertionError
    meta: dict = field(default_factory=dict)


def _workers(machine: Machine, mode: str) -> list[tuple[int, int]]:
    """PE coordinates available for VA-touching work, cluster-major.

    In svm mode the miss-handler PE (last PE of cluster 0) must not issue
    VA accesses of its own, so it is left unprogrammed."""
    plat = machine.platform
    out = []
    handler = (0, plat.pes_per_cluster - 1)
    for c in range(plat.n_clusters):
        for p in range(plat.pes_per_cluster):
            if mode == "svm" and (c, p) == handler:
                continue
            out.append((c, p))
    return out


def _split(nitems: int, nbuckets: int) -> list[tuple[int, int]]:
    """Contiguous (start, end) ranges, earlier buckets take the remainder."""
    base, rem = divmod(nitems, nbuckets)
    spans, at = [], 0
    for b in range(nbuckets):
        size = base + (1 if b < rem else 0)
        spans.append((at, at + size))
        at += size
    return spans


# ---------------------------------------------------------------------------
# matmul

def gen_matmul(machine: Machine, spec: MatmulSpec, mode: str) -> Benchmark:
    n = spec.n
    plat = machine.platform
    P = plat.pes_per_cluster
    k = plat.n_clusters
    if n % P or n % 8:
        raise ValueError(f"matmul n={n} must be a multiple of the "
                         f"{P}-row tile and the 8-column panel")
    a_sz, b_sz, c_sz = P * n * 4, n * 32, P * 32
    need = 2 * (a_sz + b_sz + c_sz)
    spm_bytes = plat.l1_spm_kib * 1024
    if need > spm_bytes:
        raise ValueError(f"matmul tile set needs {need} B of SPM, "
                         f"have {spm_bytes}")

    rng = np.random.RandomState(machine.seed & 0x7FFFFFFF)
    A = rng.randint(-8, 9, size=(n, n)).astype(np.int32)
    B = rng.randint(-8, 9, size=(n, n)).astype(np.int32)
    C0 = rng.randint(-8, 9, size=(n, n)).astype(np.int32)
    ref = (C0.astype(np.int64) + A.astype(np.int64) @ B.astype(np.int64)
           ).astype(np.int32)

    arg_a = DataArg("a", n * n * 4, "to", mode, data=A.tobytes())
    arg_b = DataArg("b", n * n * 4, "to", mode, data=B.tobytes())
    arg_c = DataArg("c", n * n * 4, "tofrom", mode, data=C0.tobytes())
    for arg in (arg_a, arg_b, arg_c):
        place_arg(machine, arg)

    # SPM layout: double-buffered A tile, B panel, C block.
    A_OFF = (0, a_sz)
    B_OFF = (2 * a_sz, 2 * a_sz + b_sz)
    C_OFF = (2 * (a_sz + b_sz), 2 * (a_sz + b_sz) + c_sz)

    tiles, panels = n // P, n // 8
    blocks = [(ti, pj) for ti in range(tiles) for pj in range(panels)]
    spans = _split(len(blocks), k)

    def pieces_of(t):
        # The first block streams in quarters so the very first compute
        # step starts sooner (shorter pipeline-fill stall); afterward the
        # double buffer hides transfer time and halves suffice.
        return 4 if t == 0 else 2

    def piece_cyc(q):
        return 8 * ((n // q) * (3 + spec.mac_cycles) + 6)

    def a_tile(ti):
        return A[ti * P:(ti + 1) * P, :]

    def b_panel(pj):
        return B[:, pj * 8:(pj + 1) * 8]

    programs = {}
    for c in range(k):
        lo, hi = spans[c]
        local = blocks[lo:hi]
        if not local:
            continue
        spm = machine.spms[c]
        tags = count()
        ops = {p: [] for p in range(P)}
        tA, tB, tC = {}, {}, {}
        bq = {}

        def block_gets(t, ti, pj, q):
            # Stream both operand stripes for block t in q slices each,
            # interleaved A/B so slice pair h completes together.  A slice
            # h is a narrow column panel landing stacked at h*(a_sz//q);
            # B row slices stack contiguously.
            a_buf, b_buf = A_OFF[t % 2], B_OFF[t % 2]
            tA[t] = tuple(next(tags) for _ in range(q))
            tB[t] = tuple(next(tags) for _ in range(q))
            bq[t] = q
            w = n // q
            gets = []
            for h in range(q):
                gets.append(DmaGet(arg_a.va + (ti * P * n + h * w) * 4,
                                   a_buf + h * (a_sz // q), a_sz // q,
                                   tA[t][h], chunk=w * 4, stride=n * 4))
                gets.append(DmaGet(arg_b.va + (h * w * n + pj * 8) * 4,
                                   b_buf + h * (b_sz // q), b_sz // q,
                                   tB[t][h], chunk=32, stride=n * 4))
            return gets

        def block_fn(p, t, ti, pj, check, spm=spm, c=c):
            a_off, b_off = A_OFF[t % 2], B_OFF[t % 2]
            c_off = C_OFF[t % 2]
            qa = bq[t]

            def run():
                a_bytes = bytes(spm.data[a_off:a_off + a_sz])
                b_bytes = bytes(spm.data[b_off:b_off + b_sz])
                w = n // qa
                a_np = np.hstack([
                    np.frombuffer(a_bytes[i * (a_sz // qa):
                                          (i + 1) * (a_sz // qa)], dtype="<i4"
                                  ).reshape(P, w)
                    for i in range(qa)])
                b_np = np.frombuffer(b_bytes, dtype="<i4").reshape(n, 8)
                if check:
                    assert np.array_equal(a_np, a_tile(ti)), \
                        f"stale A stripe {ti} in cluster {c} SPM"
                    assert np.array_equal(b_np, b_panel(pj)), \
                        f"stale B panel {pj} in cluster {c} SPM"
                row = (C0[ti * P + p, pj * 8:(pj + 1) * 8].astype(np.int64)
                       + a_np[p].astype(np.int64) @ b_np.astype(np.int64))
                o = c_off + p * 32
                spm.data[o:o + 32] = row.astype("<i4").tobytes()
            return run

        ops[0].extend(block_gets(0, *local[0], pieces_of(0)))
        for t, (ti, pj) in enumerate(local):
            q = bq[t]
            for h in range(q):
                for p in range(P):
                    ops[p].append(WaitDma(tA[t][h]))
                    ops[p].append(WaitDma(tB[t][h]))
                if h == 0 and t + 1 < len(local):
                    ops[0].extend(block_gets(t + 1, *local[t + 1],
                                             pieces_of(t + 1)))
                for p in range(P):
                    ops[p].append(Compute(
                        piece_cyc(q),
                        block_fn(p, t, ti, pj, check=p == 0)
                        if h == q - 1 else None))
            for p in range(P):
                if t >= 1:
                    ops[p].append(WaitDma(tC[t - 1]))
                ops[p].append(Barrier("cluster"))
            tC[t] = next(tags)
            ops[0].append(DmaPut(arg_c.va + (ti * P * n + pj * 8) * 4,
                                 C_OFF[t % 2], c_sz, tC[t],
                                 chunk=32, stride=n * 4))
        ops[0].append(WaitDma(tC[len(local) - 1]))
        for p in range(P):
            ops[p].append(End())
            programs[(c, p)] = ops[p]

    desc = OffloadDescriptor("matmul", [arg_a, arg_b, arg_c])

    def verify(report: RunReport) -> None:
        got = np.frombuffer(arg_c.data, dtype="<i4").reshape(n, n)
        assert np.array_equal(got, ref), "matmul result != reference multiply"

    return Benchmark("matmul", mode, desc, programs, verify,
                     meta={"blocks": len(blocks), "ref": ref})


# ---------------------------------------------------------------------------
# memcopy

def gen_memcopy(machine: Machine, spec: MemcopySpec, mode: str) -> Benchmark:
    nbytes, chunk = spec.nbytes, spec.chunk
    if nbytes < 0:
        raise ValueError("memcopy nbytes must be >= 0")
    plat = machine.platform
    if 2 * chunk > plat.l1_spm_kib * 1024:
        raise ValueError("memcopy chunk pair exceeds SPM capacity")

    payload = random.Random(machine.seed * 6364136223846793005 + 1442695040888963407
                            ).randbytes(nbytes)
    arg_src = DataArg("src", nbytes, "to", mode, data=payload)
    arg_dst = DataArg("dst", nbytes, "from", mode)
    place_arg(machine, arg_src)
    place_arg(machine, arg_dst)

    offs = list(range(0, nbytes, chunk)) if nbytes else []
    sizes = [min(chunk, nbytes - o) for o in offs]
    spans = _split(len(offs), plat.n_clusters)

    programs = {}
    for c in range(plat.n_clusters):
        lo, hi = spans[c]
        if lo == hi:
            continue
        tags = count()
        tg, tp = {}, {}
        ops = []

        def get(i, ops=ops, lo=lo):
            tg[i] = next(tags)
            ops.append(DmaGet(arg_src.va + offs[lo + i],
                              (i % 2) * chunk, sizes[lo + i], tg[i]))

        get(0)
        m = hi - lo
        for i in range(m):
            ops.append(WaitDma(tg[i]))
            if i >= 1:
                ops.append(WaitDma(tp[i - 1]))
            if i + 1 < m:
                get(i + 1)
            tp[i] = next(tags)
            ops.append(DmaPut(arg_dst.va + offs[lo + i],
                              (i % 2) * chunk, sizes[lo + i], tp[i]))
        ops.append(WaitDma(tp[m - 1]))
        ops.append(End())
        programs[(c, 0)] = ops
    if not programs:       # zero-byte degenerate case
        programs[(0, 0)] = [End()]

    desc = OffloadDescriptor("memcopy", [arg_src, arg_dst])

    def verify(report: RunReport) -> None:
        assert arg_dst.data == payload, "memcopy output differs from input"

    return Benchmark("memcopy", mode, desc, programs, verify,
                     meta={"chunks": len(offs)})


# ---------------------------------------------------------------------------
# pagerank

_IN_OFFSETS = (1, 2, 3, 5, 8, 13, 21, 34)


def _pagerank_ref(spec: LdsGraphSpec) -> list[np.ndarray]:
    """Rank vectors per iteration, in fixed-point integers (exact)."""
    N, E = spec.nodes, spec.edges_per_node
    offsets = _IN_OFFSETS[:E]
    scale = 1 << 24
    base = (15 * (scale // N)) // 100
    ranks = [np.full(N, scale // N, dtype=np.int64)]
    idx = np.arange(N, dtype=np.int64)
    for _ in range(spec.iterations):
        old = ranks[-1]
        acc = np.zeros(N, dtype=np.int64)
        for s in offsets:
            acc += old[(idx - s) % N] // E
        ranks.append(base + (85 * acc) // 100)
    return ranks


def gen_pagerank(machine: Machine, spec: LdsGraphSpec, mode: str) -> Benchmark:
    N, E, I = spec.nodes, spec.edges_per_node, spec.iterations
    if N < 1 or not 1 <= E <= len(_IN_OFFSETS):
        raise ValueError("pagerank spec out of range")
    if spec.node_bytes < 4 * E + 8:
        raise ValueError("node record too small for its neighbor addresses")
    plat = machine.platform
    rec = spec.node_bytes
    offsets = _IN_OFFSETS[:E]

    arg_lds = DataArg("graph", N * rec, "to", mode, layout="linked",
                      nodes=N, node_bytes=rec)
    arg_rank = DataArg("ranks", N * 4, "tofrom", mode)
    place_arg(machine, arg_lds)
    place_arg(machine, arg_rank)

    ref = _pagerank_ref(spec)
    arg_rank.data = ref[0].astype("<i4").tobytes()
    machine.write_va(arg_rank.va, arg_rank.data)

    def rec_va(v: int) -> int:
        return arg_lds.va + v * rec

    records = bytearray(N * rec)
    for v in range(N):
        nbr = b"".join(struct.pack("<I", rec_va((v - s) % N))
                       for s in offsets)
        body = nbr + struct.pack("<II", v, E)
        records[v * rec:v * rec + len(body)] = body
    records = bytes(records)
    arg_lds.data = records
    machine.write_va(arg_lds.va, records)

    workers = _workers(machine, mode)
    spans = dict(zip(workers, _split(N, len(workers))))
    banks = plat.l1_spm_banks
    STAGE_OFF = 0
    MIRROR_OFF = 4096
    if MIRROR_OFF + N * 4 > plat.l1_spm_kib * 1024:
        raise ValueError("rank mirror exceeds SPM capacity")

    cluster_span = {}
    for (c, p), (s, e) in spans.items():
        lo, hi = cluster_span.get(c, (s, e))
        cluster_span[c] = (min(lo, s), max(hi, e))
    first_worker = {}
    for (c, p) in workers:
        first_worker.setdefault(c, (c, p))

    def stage_fn(spm, cstart, v, i):
        def run():
            o = STAGE_OFF + (v - cstart) * 4
            spm.data[o:o + 4] = int(ref[i + 1][v]).to_bytes(4, "little",
                                                            signed=True)
        return run

    def verify_rec_fn(v):
        expect = records[v * rec:(v + 1) * rec]
        def run(got, expect=expect, v=v):
            assert got == expect, f"node record {v} corrupted"
        return run

    def mirror_check_fn(spm, i):
        expect = ref[i].astype("<i4").tobytes()
        def run():
            got = bytes(spm.data[MIRROR_OFF:MIRROR_OFF + N * 4])
            assert got == expect, f"rank mirror stale at iteration {i}"
        return run

    programs = {}
    for (c, p) in workers:
        s, e = spans[(c, p)]
        spm = machine.spms[c]
        cstart, cend = cluster_span[c]
        lead = first_worker[c] == (c, p)
        tags = count()
        ops = []
        if I > 0:
            if lead:
                t0 = next(tags)
                ops.append(DmaGet(arg_rank.va, MIRROR_OFF, N * 4, t0))
                ops.append(WaitDma(t0))
                ops.append(Compute(1, mirror_check_fn(spm, 0)))
            ops.append(Barrier("cluster"))
        for i in range(I):
            for v in range(s, e):
                ops.append(LoadVA(rec_va(v), rec, verify_rec_fn(v)))
                ops.append(LoadSpm(v % banks))
                ops.append(LoadSpm((v * 7 + i) % banks))
                ops.append(Compute(E + 4, stage_fn(spm, cstart, v, i)))
                ops.append(StoreSpm(v % banks))
            ops.append(Barrier("global"))
            if lead and cend > cstart:
                t1 = next(tags)
                ops.append(DmaPut(arg_rank.va + cstart * 4, STAGE_OFF,
                                  (cend - cstart) * 4, t1))
                ops.append(WaitDma(t1))
            ops.append(Barrier("global"))
            if lead:
                t2 = next(tags)
                ops.append(DmaGet(arg_rank.va, MIRROR_OFF, N * 4, t2))
                ops.append(WaitDma(t2))
                ops.append(Compute(1, mirror_check_fn(spm, i + 1)))
            ops.append(Barrier("cluster"))
        ops.append(End())
        programs[(c, p)] = ops

    desc = OffloadDescriptor("pagerank", [arg_lds, arg_rank])
    final = ref[-1].astype("<i4").tobytes()

    def verify(report: RunReport) -> None:
        assert arg_rank.data == final, "pagerank ranks != reference"

    return Benchmark("pagerank", mode, desc, programs, verify,
                     meta={"final_ranks": final})


# ---------------------------------------------------------------------------
# forest

_NODE = struct.Struct("<IIiiI")            # left, right, feature, threshold, id


def gen_forest(machine: Machine, spec: ForestSpec, mode: str) -> Benchmark:
    T, D = spec.trees, spec.depth
    if T < 1 or D < 1 or spec.inputs < 1 or spec.spread < 1:
        raise ValueError("forest spec out of range")
    if spec.node_bytes < _NODE.size:
        raise ValueError("forest node_bytes too small")
    nb = spec.node_bytes
    per_tree = (1 << D) - 1
    total = T * per_tree
    packed = total * nb
    stride = nb if mode == "copy" else nb * spec.spread
    arena = total * stride

    rng = random.Random(machine.seed * 0x9E3779B97F4A7C15 + 0xF0BE57)
    feat = [[rng.randrange(16) for _ in range(per_tree)] for _ in range(T)]
    thr = [[rng.randrange(256) for _ in range(per_tree)] for _ in range(T)]
    inputs = [bytes(rng.randrange(256) for _ in range(16)) + bytes(48)
              for _ in range(spec.inputs)]

    if mode == "copy":
        base = machine.alloc_copy(arena)
    else:
        base = machine.alloc_va(arena, align=1 << PAGE_SHIFT)
        machine.populate_va(base, arena)

    def node_va(t: int, i: int) -> int:
        return base + (t * per_tree + i) * stride

    leaf_level = D - 1
    arena_img = bytearray(arena)
    node_bytes = {}
    for t in range(T):
        for i in range(per_tree):
            if i < (1 << leaf_level) - 1:
                left, right = node_va(t, 2 * i + 1), node_va(t, 2 * i + 2)
            else:
                left = right = 0
            raw = _NODE.pack(left, right, feat[t][i], thr[t][i],
                             (t << 24) | i) + bytes(nb - _NODE.size)
            node_bytes[(t, i)] = raw
            o = (t * per_tree + i) * stride
            arena_img[o:o + nb] = raw
    machine.write_va(base, bytes(arena_img))

    arg_trees = DataArg("trees", packed, "to", mode, layout="linked",
                        nodes=total, node_bytes=nb, va=base)
    arg_in = DataArg("inputs", spec.inputs * 64, "to", mode,
                     data=b"".join(inputs))
    arg_out = DataArg("out", spec.inputs * 4, "from", mode)
    place_arg(machine, arg_in)
    place_arg(machine, arg_out)

    def walk(t: int, x: bytes) -> list[int]:
        path, i = [], 0
        for _ in range(D):
            path.append(i)
            if i >= (1 << leaf_level) - 1:
                break
            i = 2 * i + 1 if x[feat[t][i]] <= thr[t][i] else 2 * i + 2
        return path

    preds = []
    page_visit_bound = 0
    for idx, x in enumerate(inputs):
        acc = 0
        page_visit_bound += 1                      # the input record page
        for t in range(T):
            path = walk(t, x)
            acc = (acc + ((t * 131 + path[-1]) % 251)) & 0xFFFFFFFF
            page_visit_bound += len({node_va(t, i) >> PAGE_SHIFT
                                     for i in path}) + 1
        preds.append(acc)
    page_visit_bound += spec.inputs                # output stores

    def verify_node_fn(t, i):
        expect = node_bytes[(t, i)]
        def run(got, expect=expect, t=t, i=i):
            assert got == expect, f"tree {t} node {i} bytes corrupted"
        return run

    def verify_input_fn(idx):
        expect = inputs[idx]
        def run(got, expect=expect, idx=idx):
            assert got == expect, f"input {idx} bytes corrupted"
        return run

    workers = _workers(machine, mode)
    programs = {w: [] for w in workers}
    for idx, x in enumerate(inputs):
        w = workers[idx % len(workers)]
        ops = programs[w]
        ops.append(LoadVA(arg_in.va + idx * 64, 64, verify_input_fn(idx)))
        for t in range(T):
            for i in walk(t, x):
                ops.append(LoadVA(node_va(t, i), nb, verify_node_fn(t, i)))
                ops.append(Compute(2))
        val = preds[idx]
        ops.append(StoreVA(arg_out.va + idx * 4, 4,
                           (lambda v=val: v.to_bytes(4, "little"))))
    programs = {w: ops + [End()] for w, ops in programs.items() if ops}

    desc = OffloadDescriptor("forest", [arg_trees, arg_in, arg_out])
    expect_out = b"".join(v.to_bytes(4, "little") for v in preds)

    def verify(report: RunReport) -> None:
        assert arg_out.data == expect_out, "forest predictions != reference"

    return Benchmark("forest", mode, desc, programs, verify,
                     meta={"page_visit_bound": page_visit_bound,
                           "arena_pages": arena >> PAGE_SHIFT,
                           "predictions": preds})


# ---------------------------------------------------------------------------

SPECS = {
    "matmul": MatmulSpec,
    "memcopy": MemcopySpec,
    "pagerank": LdsGraphSpec,
    "forest": ForestSpec,
}

GENERATORS = {
    "matmul": gen_matmul,
    "memcopy": gen_memcopy,
    "pagerank": gen_pagerank,
    "forest": gen_forest,
}


def generate(machine: Machine, name: str, mode: str, **params) -> Benchmark:
    if name not in GENERATORS:
        raise ValueError(f"unknown benchmark {name!r} "
                         f"(have {', '.join(sorted(GENERATORS))})")
    if mode not in ("copy", "svm"):
        raise ValueError(f"unknown mode {mode!r}")
    spec = SPECS[name](**params)
    return GENERATORS[name](machine, spec, mode)
