"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line before asserting; the lines are printed
together at the end of the session (see ``conftest.pytest_terminal_summary``).
The two training criteria take several minutes each on one CPU core.
"""
import time

import numpy as np
import pytest
from energy_toys import TwoLayerSNN
from test_energy import brute_sops
from test_metrics import oracle
from test_model import hand_count
from test_neuron import scalar_lif

from snnpar import distill as kd
from snnpar import metrics as mt
from snnpar.autodiff import Tensor
from snnpar.cli import main
from snnpar.config import load_config
from snnpar.data import Dataset, Manifest, Record, SyntheticSpec, generate_synthetic, load_manifest, write_manifest
from snnpar.energy import count_sops, estimate_energy
from snnpar.gradcheck import TINY, check_gradients
from snnpar.model import ModelConfig, Spikingformer, param_count
from snnpar.neuron import LifParams, LifState, lif_step, multistep_lif
from snnpar.nn import probe
from snnpar.teacher import TeacherConfig, merge_artifacts, teacher_mA, teacher_outputs, train_mock_teacher
from snnpar.tensorio import load_checkpoint, read_tensor, save_checkpoint, write_tensor
from snnpar.train import Checkpoint, Trainer, evaluate

LINES: list[str] = []

# student regime for the distillation trend: a train subset small enough that the
# teacher's soft targets carry information the hard labels alone do not
KD_SUBSET, KD_EPOCHS, KD_SEEDS = 300, 6, (0, 1, 2)


def record(name: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    generate_synthetic(SyntheticSpec(seed=0, n_train=2000, n_test=500), root)
    return Dataset.load(root, "train"), Dataset.load(root, "test")


def test_spike_purity():
    t0 = time.perf_counter()
    cfg = ModelConfig(time_steps=4, num_blocks=2, embed_dim=64)
    rng = np.random.default_rng(0)
    checked, bad = 0, []
    for chunk in range(10):
        model = Spikingformer(ModelConfig(**{**cfg.__dict__, "seed": chunk}))
        x = rng.random((10, 3, cfg.image_height, cfg.image_width)) * rng.uniform(0.5, 4.0)
        with probe() as p:
            model(x)
        convs = [c for c in p.calls if c.kind == "conv" and not c.real_input]
        assert len(convs) == cfg.tokenizer_stages + 6 * cfg.num_blocks
        for c in convs:
            checked += 1
            if not np.isin(c.inputs, (0.0, 1.0)).all():
                bad.append(c.name)
    secs = time.perf_counter() - t0
    ok = not bad and secs < 60
    record("spike purity", ok, f"100 inputs, {checked} conv inputs checked, non-binary {sorted(set(bad))}, "
                               f"{secs:.1f}s")
    assert ok


def test_lif_oracle():
    rng = np.random.default_rng(1)
    mismatches = spikes = resets = 0
    for case in range(1000):
        T, n = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        tau = float(rng.uniform(1.0, 6.0))
        u_th = float(rng.uniform(0.2, 2.0))
        u_rest = float(rng.uniform(-0.5, u_th))
        u_r = float(u_th - rng.uniform(0.05, 2.0))
        R = float(rng.uniform(0.2, 3.0))
        p = LifParams(tau, u_rest, u_th, u_r, R)
        x = rng.normal(0.8, 1.5, size=(T, n))
        want = np.array([scalar_lif(x[:, i], tau, u_rest, u_th, u_r, R) for i in range(n)]).T
        got = multistep_lif(Tensor(x), p).data
        # unrolled single steps expose the membrane: it must sit at u_r right after each spike
        state = LifState.resting((n,), p, np.float64)
        for t in range(T):
            s, state = lif_step(state, x[t], p)
            if not np.array_equal(s, want[t]) or not np.all(state.u[s == 1] == u_r):
                mismatches += 1
                break
            resets += int(s.sum())
        mismatches += int(not np.array_equal(got, want))
        spikes += int(want.sum())
    ok = mismatches == 0 and resets == spikes > 0
    record("LIF oracle", ok, f"1000 cases, {spikes} spikes, {resets} resets to u_r, {mismatches} mismatches")
    assert ok


def test_gradient_fidelity(capsys):
    assert (TINY.time_steps, TINY.num_blocks, TINY.embed_dim, TINY.image_height, TINY.image_width) == (2, 1, 8, 4, 4)
    t0 = time.perf_counter()
    code = main(["grad-check", "--samples", "256"])
    secs = time.perf_counter() - t0
    capsys.readouterr()
    rep = check_gradients(TINY, n_samples=256)
    ok = code == 0 and rep.passed and len(rep.results) >= 200 and secs < 120
    record("gradient fidelity", ok, f"{len(rep.results)} params, max rel err {rep.max_rel_error:.2e} "
                                    f"(< 1e-3), exit {code}, {secs:.1f}s")
    assert ok


def test_loss_properties():
    rng = np.random.default_rng(2)
    neg, eq_worst, reduce_bad = 0, 0.0, 0
    zero = kd.DistillConfig(alpha=0.0, beta=0.0)
    for _ in range(1000):
        B, M, D = int(rng.integers(1, 6)), int(rng.integers(1, 9)), int(rng.integers(2, 9))
        scale = float(rng.choice([0.1, 1.0, 10.0, 100.0]))
        temp = float(rng.uniform(0.5, 5.0))
        s, t = rng.normal(size=(B, M)) * scale, rng.normal(size=(B, M)) * scale
        fs, ft, txt = rng.normal(size=(B, D)), rng.normal(size=(B, D)), rng.normal(size=(M, D))
        rk = kd.resp_kd(Tensor(s), t, temp)
        fk = kd.feat_kd(Tensor(fs), ft, txt, temperature=temp)
        neg += int(rk.item() < 0) + int(fk.item() < 0)
        eq_worst = max(eq_worst, kd.resp_kd(Tensor(s), s, temp).item(),
                       kd.feat_kd(Tensor(fs), fs, txt, temperature=temp).item())
        y = (rng.random((B, M)) < 0.5).astype(np.float64)
        ce = kd.weighted_bce(Tensor(s), y, kd.AttrWeights.from_ratios(rng.uniform(0.05, 0.95, M)))
        reduce_bad += int(kd.total_loss(ce, rk, fk, zero).data.tobytes() != ce.data.tobytes())
    ok = neg == 0 and eq_worst <= 1e-9 and reduce_bad == 0
    record("loss properties", ok, f"1000 cases, {neg} negative KD values, max KD at equality {eq_worst:.1e}, "
                                  f"{reduce_bad} inexact CE reductions")
    assert ok


def test_metrics_oracle():
    rng = np.random.default_rng(3)
    worst, order_bad = 0.0, 0
    for case in range(1000):
        n, m = int(rng.integers(1, 25)), int(rng.integers(1, 10))
        true = (rng.random((n, m)) < rng.uniform(0.05, 0.95)).astype(np.int64)
        pred = (rng.random((n, m)) < rng.uniform(0.05, 0.95)).astype(np.int64)
        for mode in ("instance", "count"):
            got = mt.evaluate_predictions(pred, true, mode).as_dict()
            want = oracle(pred, true, mode)
            worst = max(worst, max(abs(got[k] - want[k]) for k in mt.KEYS))
        perm = rng.permutation(n)
        cuts = np.sort(rng.integers(0, n + 1, size=int(rng.integers(0, 4))))
        acc = mt.ConfusionCounts(m)
        for chunk in np.split(perm, cuts):
            acc = acc.merge(mt.ConfusionCounts(m).accumulate(pred[chunk], true[chunk]))
        whole = mt.ConfusionCounts(m).accumulate(pred, true)
        order_bad += int(mt.report(acc).as_dict() != mt.report(whole).as_dict())
    ok = worst <= 1e-12 and order_bad == 0
    record("metrics oracle", ok, f"1000 matrices x 2 modes, max |diff| {worst:.1e}, "
                                 f"{order_bad} batch-order differences")
    assert ok


@pytest.mark.slow
def test_desk_scale_learning(desk_data):
    train, test = desk_data
    cfg = load_config(None, {"train.epochs": "10", "schedule.warmup_epochs": "1", "schedule.decay_epochs": "8",
                             "optim.lr": "1e-3"})
    m = cfg.model
    assert (m.time_steps, m.num_blocks, m.embed_dim, m.num_attributes, m.image_height, m.image_width) == \
        (4, 2, 64, 8, 64, 32)
    t0 = time.perf_counter()
    trainer = Trainer(cfg, train)
    trainer.fit()
    secs = time.perf_counter() - t0
    rep = evaluate(trainer.model, test)
    ok = rep.mA >= 0.95 and rep.F1 >= 0.90 and cfg.train.epochs <= 30 and secs < 1800
    record("desk-scale learning", ok, f"mA {rep.mA:.4f} (>= 0.95), F1 {rep.F1:.4f} (>= 0.90), "
                                      f"{cfg.train.epochs} epochs, {secs / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_distillation_trend(desk_data):
    train, test = desk_data
    net = train_mock_teacher(train, TeacherConfig(epochs=6))
    art = merge_artifacts([teacher_outputs(net, train), teacher_outputs(net, test)])
    t_mA = teacher_mA(art, test)
    sub = train.subset(np.random.default_rng(0).permutation(len(train))[:KD_SUBSET])
    f1 = {"ce": [], "full": []}
    for seed in KD_SEEDS:
        for mode in f1:
            cfg = load_config(None, {"train.epochs": str(KD_EPOCHS), "schedule.warmup_epochs": "1",
                                     "schedule.decay_epochs": str(KD_EPOCHS - 1), "optim.lr": "1e-3",
                                     "train.seed": str(seed), "model.seed": str(seed)})
            trainer = Trainer(cfg, sub, teacher=art if mode == "full" else None)
            trainer.fit()
            f1[mode].append(evaluate(trainer.model, test).F1)
    ce, full = float(np.mean(f1["ce"])), float(np.mean(f1["full"]))
    ok = t_mA >= 0.99 and full >= ce
    record("distillation trend", ok, f"teacher mA {t_mA:.4f}, mean F1 CE {ce:.4f} vs CE+respKD+featKD "
                                     f"{full:.4f} over seeds {list(KD_SEEDS)} (per seed {np.round(f1['ce'], 4)} vs "
                                     f"{np.round(f1['full'], 4)})")
    assert ok


def test_energy_accounting():
    rng = np.random.default_rng(4)
    mismatches, nets = 0, 0
    for T in (1, 2, 3):
        for seed in range(3):
            net = TwoLayerSNN(T=T, seed=seed)
            x = rng.random((2, 2, 6, 5)) * 2
            stats = count_sops(net, x, time_steps=T)
            sops, enc = brute_sops(net, x, T)
            mismatches += int(stats.sops != sops or stats.encoder_macs != enc)
            nets += 1
    ratios, rates = [], []
    for seed in range(10):
        net = TwoLayerSNN(T=1, seed=seed, bias=-0.5)
        stats = count_sops(net, rng.random((2, 2, 6, 5)), time_steps=1)
        rates.append(stats.mean_firing_rate())
        ratios.append(estimate_energy(stats.sops, stats.macs, stats.encoder_macs).ratio)
    sparse = [r for r, f in zip(ratios, rates) if f < 0.9 / 4.6]
    ok = mismatches == 0 and len(sparse) > 0 and all(r < 1 for r in sparse)
    record("energy accounting", ok, f"{nets} toy nets, {mismatches} SOP mismatches vs tap enumeration; "
                                    f"{len(sparse)} sparse T=1 cases, max ratio {max(sparse, default=np.nan):.3f}")
    assert ok


def test_parameter_counting():
    configs = [{}, dict(embed_dim=32, num_blocks=1, num_heads=2),
               dict(embed_dim=128, num_blocks=4, mlp_ratio=2, num_attributes=35),
               dict(image_height=256, image_width=128, tokenizer_stages=4, embed_dim=64),
               dict(tokenizer_widths=(8, 24, 48), embed_dim=48, num_heads=3, num_attributes=26)]
    bad = []
    for kw in configs:
        cfg = ModelConfig(**kw)
        actual = sum(p.size for p in Spikingformer(cfg).parameters())
        if not param_count(cfg) == actual == hand_count(cfg):
            bad.append(kw)
    ok = not bad
    record("parameter counting", ok, f"{len(configs)} configs, mismatches {bad}")
    assert ok


def test_file_round_trips(tmp_path, small_train):
    rng = np.random.default_rng(5)
    results = {}
    arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
    write_tensor(tmp_path / "x.sntf", arr)
    results["tensor"] = read_tensor(tmp_path / "x.sntf").tobytes() == arr.tobytes()

    cfg = load_config(None, {"model.embed_dim": "16", "model.num_heads": "2", "model.num_blocks": "1",
                             "model.time_steps": "2", "train.epochs": "2", "schedule.warmup_epochs": "1"})
    trainer = Trainer(cfg, small_train.subset(range(12)))
    trainer.fit(epochs=1)
    ck = trainer.checkpoint()
    ck.save(tmp_path / "c.snpk")
    back = Checkpoint.load(tmp_path / "c.snpk")
    raw, raw_back = ck.to_tensors(), load_checkpoint(tmp_path / "c.snpk")
    results["checkpoint"] = (list(raw) == list(raw_back)
                             and all(raw[k].tobytes() == raw_back[k].tobytes() for k in raw)
                             and back.epoch == ck.epoch and back.history == ck.history)

    art = kd.TeacherArtifact(rng.permutation(1000)[:7].astype(np.int64), rng.normal(size=(7, 8)),
                             rng.normal(size=(7, 6)), rng.normal(size=(8, 6)))
    kd.write_teacher(tmp_path / "t.snta", art)
    tb = kd.read_teacher(tmp_path / "t.snta")
    results["teacher artifact"] = all(getattr(tb, f).tobytes() == getattr(art, f).tobytes()
                                      for f in ("ids", "logits", "visual", "text"))

    recs = [Record(int(i), f"img/{i}.sntf", (rng.random(8) < 0.4).astype(np.uint8)) for i in range(9)]
    man = Manifest([f"a{j}" for j in range(8)], recs, "train", rng.random(8) < 0.7)
    write_manifest(tmp_path / "manifest_train.txt", man)
    first = (tmp_path / "manifest_train.txt").read_bytes()
    mb = load_manifest(tmp_path / "manifest_train.txt", check_files=False)
    write_manifest(tmp_path / "again.txt", mb)
    results["manifest"] = (first == (tmp_path / "again.txt").read_bytes()
                           and [(r.id, r.path, r.labels.tobytes()) for r in mb.records]
                           == [(r.id, r.path, r.labels.tobytes()) for r in recs])
    ok = all(results.values())
    record("file-format round trips", ok, ", ".join(f"{k} {'ok' if v else 'MISMATCH'}" for k, v in results.items()))
    assert ok
