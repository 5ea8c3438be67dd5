"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line."""

import io
import json
import math
import time
from collections import Counter, deque
from fractions import Fraction

import numpy as np
from PIL import Image

from piqbench.allocator import allocation_from_weights, largest_remainder, plan_allocation
from piqbench.dedup import group, group_labels, hamming, phash
from piqbench.losses import FeatureBatch, br_loss, euclid_cos_gap, finite_diff_check, normalize_rows, total_loss_uncertainty
from piqbench.metrics import evaluate_retrieval, lts, macro_retrieval, piq, rank_gallery
from piqbench.sampler import BatchSampler, SamplerConfig, Strategy, pk_batches, random_epoch
from piqbench.synth import SynthSpec, gen_embeddings, oracle_lts, oracle_map, random_raster
from piqbench.schema import Subset

# mAP, Rank-1, gender, age, physique, height, body, arm, expression -> reference PIQ
TABLE = {
    "single-task": ((0.424, 0.603, 0.885, 0.717, 0.287, 0.615, 0.527, 0.634, 0.202), 0.480),
    "sim-mtl": ((0.314, 0.509, 0.847, 0.722, 0.472, 0.708, 0.624, 0.596, 0.183), 0.473),
    "fss": ((0.367, 0.541, 0.831, 0.718, 0.471, 0.692, 0.618, 0.598, 0.176), 0.479),
    "fss-triplet": ((0.342, 0.525, 0.852, 0.688, 0.430, 0.680, 0.581, 0.559, 0.164), 0.457),
    "fss-br": ((0.359, 0.538, 0.837, 0.740, 0.478, 0.699, 0.617, 0.600, 0.174), 0.480),
    "fss-br-uncertainty": ((0.351, 0.536, 0.823, 0.685, 0.444, 0.650, 0.561, 0.530, 0.340), 0.495),
    "sim-mtl-pk": ((0.310, 0.514, 0.861, 0.474, 0.279, 0.525, 0.448, 0.412, 0.181), 0.389),
    "sim-mtl-shuffle": ((0.248, 0.448, 0.832, 0.678, 0.424, 0.635, 0.568, 0.545, 0.152), 0.425),
    "sim-mtl-r50": ((0.265, 0.447, 0.811, 0.715, 0.472, 0.700, 0.600, 0.584, 0.189), 0.453),
}


def test_01_piq_table(criterion):
    with criterion(1, "PIQ reproduces all 9 reference rows within 0.001"):
        t0 = time.perf_counter()
        worst = 0.0
        for name, (v, want) in TABLE.items():
            got = piq(v[0], v[1], v[2:6], v[6:8], v[8])
            worst = max(worst, abs(got - want))
            assert abs(got - want) <= 1e-3, f"{name}: {got:.5f} vs {want}"
        assert time.perf_counter() - t0 < 1.0
        print(f"  worst deviation {worst:.5f}")


def test_02_euclid_cos_gap(criterion):
    with criterion(2, "squared-distance / cosine identity gap < 1e-9"):
        rng = np.random.default_rng(2)
        worst = 0.0
        for d in (2, 16, 256):
            a = normalize_rows(rng.normal(size=(10_000, d)))
            b = normalize_rows(rng.normal(size=(10_000, d)))
            for i in range(10_000):
                worst = max(worst, euclid_cos_gap(a[i], b[i]))
        assert worst < 1e-9, worst
        print(f"  worst gap {worst:.2e}")


def _direct_br(f, y):
    n = len(f)
    u = [np.asarray(r, float) / math.sqrt(sum(x * x for x in r)) for r in f]
    total = 0.0
    for i in range(n):
        if y[i] is None:
            continue
        denom = sum(math.exp(float(u[i] @ u[c])) for c in range(n) if c != i)
        for j in range(n):
            if j != i and y[j] == y[i]:
                total -= math.log(math.exp(float(u[i] @ u[j])) / denom)
    return total / n


def test_03_br_loss(criterion):
    with criterion(3, "BR loss zero cases, worked value and gradients"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        for r in (br_loss(FeatureBatch(rng.normal(size=(2, 4)), ["a", "a"])),
                  br_loss(FeatureBatch(rng.normal(size=(4, 4)), ["a", "b", "c", "d"]))):
            assert r.value == 0.0 and not np.any(r.grad)
        f, y = [(1.0, 0.0), (1.0, 0.0), (0.0, 1.0)], ["A", "A", "B"]
        got = br_loss(FeatureBatch(f, y)).value
        assert abs(got - _direct_br(f, y)) <= 1e-5 and abs(got - 0.20884) <= 1e-5
        worst = 0.0
        for _ in range(50):
            n, d = int(rng.integers(3, 17)), int(rng.integers(2, 33))
            labels = [int(v) for v in rng.integers(0, max(2, n // 3), size=n)]
            batch = FeatureBatch(rng.normal(size=(n, d)), labels)
            assert abs(br_loss(batch).value - _direct_br(batch.f, labels)) < 1e-9
            worst = max(worst, finite_diff_check(br_loss, batch, 1e-5))
        assert worst < 1e-4, worst
        assert time.perf_counter() - t0 < 10.0
        print(f"  worst relative gradient error {worst:.2e}")


def test_04_lts_oracle(criterion):
    with criterion(4, "greedy LTS equals exhaustive oracle; uniform closed form exact"):
        rng = np.random.default_rng(4)
        for i in range(500):
            n = int(rng.integers(1, 16))
            hist = [int(c) for c in rng.integers(1, 200, size=n)]
            k = (0.1, 0.2, 0.5, 0.9)[i % 4]
            assert lts(hist, k) == oracle_lts(hist, k), (hist, k)
        for n in range(1, 16):
            for k in ("0.1", "0.2", "0.5", "0.9"):
                kn = Fraction(k) * n
                assert lts([5] * n, float(k)) == float(math.ceil(kn) / kn), (n, k)


def _retrieval_instance(r):
    n_ids = int(r.integers(1, 6))
    n_gal = int(r.integers(n_ids, 21))
    d = int(r.integers(2, 8))
    g_pids = [f"p{i}" for i in range(n_ids)] + [f"p{int(r.integers(n_ids))}" for _ in range(n_gal - n_ids)]
    r.shuffle(g_pids)
    n_q = int(r.integers(1, 8))
    q_pids = [f"p{int(r.integers(n_ids))}" for _ in range(n_q)]
    return r.normal(size=(n_q, d)), q_pids, r.normal(size=(n_gal, d)), g_pids


def test_05_macro_retrieval_oracle(criterion):
    with criterion(5, "macro retrieval equals naive oracle; perfect clusters score 1"):
        rng = np.random.default_rng(5)
        for _ in range(100):
            Q, q_pids, G, g_pids = _retrieval_instance(rng)
            results = [rank_gallery(Q[i], G, query_id=f"q{i}", query_pid=q_pids[i]) for i in range(len(Q))]
            got = macro_retrieval(results, g_pids).macro_map
            assert abs(got - oracle_map(Q, q_pids, G, g_pids)) <= 1e-12
        data = gen_embeddings(SynthSpec(num_ids=12, dim=16, max_count=6, noise=0.0, seed=5))
        q, qp = data.subset(Subset.QUERY)
        g, gp = data.subset(Subset.GALLERY)
        s = evaluate_retrieval(q.values, q.ids, qp, g.values, g.ids, gp)
        assert s.macro_map == 1.0 and s.macro_rank1 == 1.0


def test_06_group_exclusion(criterion):
    with criterion(6, "dedup groups cancel planted duplicate frames exactly"):
        rng = np.random.default_rng(6)
        data = gen_embeddings(SynthSpec(num_ids=8, dim=16, max_count=6, noise=0.35, seed=6))
        q, qp = data.subset(Subset.QUERY)
        g, gp = data.subset(Subset.GALLERY)
        rasters = {i: random_raster(rng) for i in (*q.ids, *g.ids)}
        dup_ids = [f"dup{i}" for i in range(len(q.ids))]
        for qi, di in zip(q.ids, dup_ids):
            rasters[di] = rasters[qi].copy()
        G_dup = np.vstack([g.values, q.values])
        ids_dup = [*g.ids, *dup_ids]
        pids_dup = [*gp, *qp]

        groups = group([phash(img, i) for i, img in rasters.items()], 10).groups
        sizes = Counter(groups.values())
        assert sorted(k for k, v in sizes.items() if v > 1) == sorted({groups[i] for i in q.ids})
        assert all(groups[qi] == groups[di] for qi, di in zip(q.ids, dup_ids))

        # reference: each query ranked by the naive oracle against the gallery minus its own copy
        per_id = {}
        for i, (qv, p) in enumerate(zip(q.values, qp)):
            keep = [j for j in range(len(ids_dup)) if ids_dup[j] != dup_ids[i]]
            ap = oracle_map([qv], [p], G_dup[keep], [pids_dup[j] for j in keep])
            per_id.setdefault(p, []).append(ap)
        clean = math.fsum(math.fsum(v) / len(v) for _, v in sorted(per_id.items())) / len(per_id)
        grouped = evaluate_retrieval(q.values, q.ids, qp, G_dup, ids_dup, pids_dup, groups).macro_map
        leaky = evaluate_retrieval(q.values, q.ids, qp, G_dup, ids_dup, pids_dup).macro_map
        assert clean < 1.0
        assert abs(grouped - clean) <= 1e-12
        assert leaky > clean
        print(f"  clean {clean:.6f}  grouped {grouped:.6f}  without groups {leaky:.6f}")


def _bfs_components(values, t):
    n = len(values)
    comp = [-1] * n
    out = set()
    for s in range(n):
        if comp[s] >= 0:
            continue
        comp[s] = s
        members, queue = [s], deque([s])
        while queue:
            i = queue.popleft()
            for j in range(n):
                if comp[j] < 0 and bin(values[i] ^ values[j]).count("1") <= t:
                    comp[j] = s
                    members.append(j)
                    queue.append(j)
        out.add(frozenset(members))
    return out


def test_07_dedup(criterion):
    with criterion(7, "hamming metric axioms, grouping vs BFS, re-encode invariance"):
        rng = np.random.default_rng(7)
        v = [int(x) for x in rng.integers(0, 2 ** 64, size=30_000, dtype=np.uint64)]
        for a, b, c in zip(v[0::3], v[1::3], v[2::3]):
            assert hamming(a, a) == 0 and hamming(a, b) == hamming(b, a)
            assert (hamming(a, b) == 0) == (a == b)
            assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
        base = [int(x) for x in rng.integers(0, 2 ** 64, size=50, dtype=np.uint64)]
        values = []
        for _ in range(200):
            h = base[int(rng.integers(50))]
            for bit in rng.choice(64, size=int(rng.integers(0, 9)), replace=False):
                h ^= 1 << int(bit)
            values.append(h)
        for t in (0, 5, 10):
            want = _bfs_components(values, t)
            for prefilter in (False, True):
                labels = group_labels(values, t, prefilter=prefilter)
                got = {}
                for i, lab in enumerate(labels):
                    got.setdefault(int(lab), set()).add(i)
                assert {frozenset(s) for s in got.values()} == want
        for _ in range(20):
            img = random_raster(rng, 96, 48)
            buf = io.BytesIO()
            Image.fromarray(img).save(buf, format="PNG")
            back = np.asarray(Image.open(io.BytesIO(buf.getvalue())).convert("RGB"))
            assert np.array_equal(back, img) and phash(back) == phash(img)


def test_08_allocator(criterion, schema):
    with criterion(8, "allocator worked example and invariants"):
        alloc = plan_allocation(16, schema)
        assert list(alloc.widths().values()) == [1, 2, 2, 1, 1, 2, 2, 2, 3]
        rng = np.random.default_rng(8)
        for _ in range(1000):
            weights = [int(w) for w in rng.integers(1, 12, size=9)]
            total = int(rng.integers(9, 400))
            dims = largest_remainder(weights, total)
            assert sum(dims) == total and min(dims) >= 1
            quotas = [w * total / sum(weights) for w in weights]
            if all(math.floor(q) >= 1 for q in quotas):
                assert all(abs(d - q) < 1 for d, q in zip(dims, quotas))
            assert largest_remainder(weights, total) == dims
            a = allocation_from_weights(total, weights)
            spans = list(a.slots.values())
            assert spans[0][0] == 0 and spans[-1][1] == total
            assert all(x[1] == y[0] for x, y in zip(spans, spans[1:]))
            assert [e - s for s, e in spans] == dims


def test_09_samplers(criterion):
    with criterion(9, "P-K composition, permutation epochs, reproducible streams"):
        data = gen_embeddings(SynthSpec(num_ids=40, tail_exponent=1.2, max_count=30, num_unidentified=25, seed=9))
        pids = [a.person_id for a in data.annotations]
        have = Counter(p for p in pids if p is not None)
        cfg = SamplerConfig(Strategy.PK, batch_size=16, P=4, K=4, seed=9)
        n_batches = 0
        for epoch in range(100):
            for batch in pk_batches(pids, cfg, epoch):
                counts = Counter(pids[i] for i in batch)
                assert len(batch) == 16 and len(counts) == 4 and set(counts.values()) == {4}
                assert None not in counts
                for p in counts:
                    if have[p] >= 4:
                        assert len({i for i in batch if pids[i] == p}) == 4
                n_batches += 1
        assert n_batches == 100 * (len(have) // 4)
        rcfg = SamplerConfig(batch_size=7, seed=9)
        for epoch in range(100):
            flat = [i for b in random_epoch(len(pids), rcfg, epoch) for i in b]
            assert sorted(flat) == list(range(len(pids)))

        def stream(strategy, seed):
            c = SamplerConfig(strategy, batch_size=16, P=4, K=4, seed=seed)
            sampler = BatchSampler(c, pids, len(pids))
            return json.dumps([b for _, b in sampler.epochs(5)]).encode()

        for strategy in Strategy:
            assert stream(strategy, 1) == stream(strategy, 1)
            assert stream(strategy, 1) != stream(strategy, 2)


def test_10_uncertainty(criterion):
    with criterion(10, "uncertainty loss value, gradient and stationary point"):
        rng = np.random.default_rng(10)
        for _ in range(50):
            L = rng.uniform(0.05, 5.0, size=8)
            assert total_loss_uncertainty(L, np.zeros(8)).value == math.fsum(L)
            s = rng.normal(size=8)
            assert finite_diff_check(total_loss_uncertainty, L, 1e-6, wrt="grad_aux", aux=s) < 1e-6
            star = np.log(L)
            r = total_loss_uncertainty(L, star)
            assert np.max(np.abs(r.grad_aux)) < 1e-12
            for i in range(8):
                for h in (1e-3, -1e-3):
                    moved = star.copy()
                    moved[i] += h
                    assert total_loss_uncertainty(L, moved).value > r.value
