import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segqa import attack, core, models
from segqa.data import QualitySample
from segqa.errors import AttackError, ValidationError

from .test_models import finite_difference_grad, rel_err


@pytest.fixture(scope="module")
def pipelines():
    rec = models.build_recnet(depth=2, base_width=4, seed=0)
    prop = models.build_regnet("proposed", seed=1)
    base = models.build_regnet("baseline", seed=2)
    return {"proposed": attack.Pipeline(prop, rec), "baseline": attack.Pipeline(base)}


@pytest.fixture(scope="module")
def samples():
    rng = np.random.default_rng(0)
    out = []
    for i in range(6):
        gt = np.zeros((64, 64), np.uint8)
        gt[20:40, 20:40] = 1
        cand = np.roll(gt, i * 3, axis=1)
        out.append(QualitySample(image=rng.random((64, 64)).astype(np.float32), seg_candidate=cand,
                                 seg_gt=gt, gt_dice=core.dice(cand, gt), source_id=f"s{i}", sample_id=f"s{i}-c0"))
    return out


# -- fgsm_perturb -----------------------------------------------------------

@pytest.mark.property
def test_fgsm_zero_epsilon_is_identity():
    clean = np.random.default_rng(0).random((8, 8))
    grad = np.random.default_rng(1).standard_normal((8, 8))
    np.testing.assert_array_equal(attack.fgsm_perturb(grad, clean, 0.0, 0, 1), clean)


@pytest.mark.property
def test_fgsm_clips():
    out = attack.fgsm_perturb(np.array([[1.0]]), np.array([[0.99]]), 0.05, 0.0, 1.0)
    assert out[0, 0] == 1.0


@pytest.mark.property
def test_fgsm_quadratic_example():
    w, y, x = 2.0, 2.0, 0.5

    def loss(v):
        return (w * v - y) ** 2

    analytic = 2 * (w * x - y) * w
    h = 1e-6
    numeric = (loss(x + h) - loss(x - h)) / (2 * h)
    assert analytic == -4.0
    assert numeric == pytest.approx(analytic, rel=1e-8)
    assert np.sign(numeric) == np.sign(analytic)
    out = attack.fgsm_perturb(np.array([[numeric]]), np.array([[x]]), 0.1, 0.0, 1.0)
    assert out[0, 0] == pytest.approx(0.4)


@pytest.mark.property
def test_fgsm_sign_zero_leaves_coordinate():
    grad = np.array([[0.0, 2.0, -3.0]])
    clean = np.array([[0.5, 0.5, 0.5]])
    np.testing.assert_allclose(attack.fgsm_perturb(grad, clean, 0.1, 0, 1), [[0.5, 0.6, 0.4]])


@pytest.mark.property
@settings(max_examples=100)
@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10)),
       arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
       st.floats(0, 0.5))
def test_fgsm_linf_bound(grad, clean, eps):
    out = attack.fgsm_perturb(grad, clean, eps, 0.0, 1.0)
    assert np.max(np.abs(out - clean)) <= eps + 1e-15
    active = (grad != 0) & (clean + eps * np.sign(grad) >= 0) & (clean + eps * np.sign(grad) <= 1)
    np.testing.assert_allclose(np.abs(out - clean)[active], eps, atol=1e-12)
    np.testing.assert_array_equal(out[grad == 0], clean[grad == 0])


def test_fgsm_nan_gradient_names_sample():
    with pytest.raises(AttackError, match="slice-7"):
        attack.fgsm_perturb(np.array([[np.nan]]), np.array([[0.5]]), 0.1, 0, 1, sample_id="slice-7")


def test_attack_config_validation():
    with pytest.raises(ValidationError):
        attack.AttackConfig(epsilons=(0.1, 0.05))
    with pytest.raises(ValidationError):
        attack.AttackConfig(epsilons=(-0.1,))
    with pytest.raises(ValidationError):
        attack.AttackConfig(surface="mask")


# -- gradients ---------------------------------------------------------------

def _toy(seed=0):
    rec = models.build_recnet(depth=2, base_width=4, seed=seed, image_size=16)
    rec.net.double()
    regs = {}
    for mode in models.MODES:
        g = models.build_regnet(mode, seed=seed + 1, image_size=16, widths=(4, 8, 8, 8, 8), hidden=(16, 8))
        g.net.double()
        regs[mode] = g
    return rec, regs


@pytest.mark.property
@pytest.mark.parametrize("mode,surface", [("baseline", "input_image"), ("proposed", "input_image"),
                                          ("proposed", "difference_image")])
def test_attack_gradient_matches_finite_differences(mode, surface):
    rec, regs = _toy()
    pipe = attack.Pipeline(regs[mode], rec)
    rng = np.random.default_rng(3)
    image = rng.random((1, 16, 16))
    seg = (rng.random((1, 16, 16)) > 0.6).astype(np.uint8)
    gt = np.array([0.3])
    if surface == "input_image":
        clean = image
    else:
        r = models.reconstruct_batch(rec, image * (1 - seg))
        clean = core.difference_image(image, r)

    def loss(x):
        p = attack.predict_from_surface(pipe, x[None], image, seg, surface)[0]
        return (p - gt[0]) ** 2

    analytic = attack.surface_gradient(pipe, clean, seg, gt, surface)[0]
    numeric = finite_difference_grad(loss, clean[0], h=1e-5)
    assert np.linalg.norm(numeric) > 0
    assert rel_err(analytic, numeric) < 1e-4


# -- attack_sample / sweep -------------------------------------------------

@pytest.mark.parametrize("mode,surface", [("baseline", "input_image"), ("proposed", "input_image"),
                                          ("proposed", "difference_image")])
def test_zero_epsilon_matches_clean_prediction(pipelines, samples, mode, surface):
    pipe = pipelines[mode]
    s = samples[2]
    cfg = attack.AttackConfig(surface=surface)
    if mode == "proposed":
        clean = models.predict_quality(pipe.recnet, pipe.regnet, s.image, s.seg_candidate)
    else:
        clean = models.predict_quality_baseline(pipe.regnet, s.image, s.seg_candidate)
    assert attack.attack_sample(pipe, s, cfg, 0.0) == clean


@pytest.mark.property
@pytest.mark.parametrize("mode,surface", [("baseline", "input_image"), ("proposed", "input_image"),
                                          ("proposed", "difference_image")])
def test_perturbation_bound_and_mask_invariance(pipelines, samples, mode, surface):
    pipe = pipelines[mode]
    images = np.stack([s.image for s in samples])
    segs = np.stack([s.seg_candidate for s in samples])
    before = segs.tobytes()
    dice = [s.gt_dice for s in samples]
    lo, hi = attack.CLIP[surface]
    for eps, clean, adv, pred in attack.attack_batch(pipe, images, segs, dice, surface, attack.DEFAULT_EPSILONS):
        assert np.max(np.abs(adv.astype(np.float64) - clean)) <= eps
        assert adv.min() >= lo and adv.max() <= hi
        assert np.all((pred >= 0) & (pred <= 1))
    assert segs.tobytes() == before


def test_surface_mode_compatibility(pipelines, samples):
    with pytest.raises(ValidationError):
        attack.attack_sample(pipelines["baseline"], samples[0], attack.AttackConfig(surface="difference_image"), 0.0)
    with pytest.raises(ValidationError):
        attack.attack_sample(pipelines["baseline"], samples[0], attack.AttackConfig(), 0.07)


def test_sweep_cardinality_and_control_row(pipelines, samples):
    pipe = pipelines["proposed"]
    cfg = attack.AttackConfig()
    rows = attack.sweep(pipe, samples, cfg, batch_size=4)
    assert len(rows) == len(samples) * len(cfg.epsilons)
    control = attack.sweep(pipe, samples, attack.AttackConfig(epsilons=(0.0,)), batch_size=4)
    plain = models.predict_quality_batch(pipe.recnet, pipe.regnet, np.stack([s.image for s in samples][:4]),
                                         np.stack([s.seg_candidate for s in samples][:4]))
    for r, p in zip(control[:4], plain):
        assert r["attacked_pred"] == r["clean_pred"] == float(p)
    assert rows[:len(samples)] == control


def test_sweep_deterministic_and_csv_roundtrip(pipelines, samples, tmp_path):
    pipe = pipelines["baseline"]
    a = attack.sweep(pipe, samples, attack.AttackConfig())
    b = attack.sweep(pipe, samples, attack.AttackConfig())
    assert a == b
    path = attack.write_sweep_csv(a, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == ",".join(attack.CSV_COLUMNS)
    back = attack.read_sweep_csv(path)
    for r, q in zip(a, back):
        for k in ("epsilon", "gt_dice", "clean_pred", "attacked_pred"):
            assert r[k] == q[k]


def test_sweep_rejects_empty(pipelines):
    with pytest.raises(ValidationError):
        attack.sweep(pipelines["baseline"], [], attack.AttackConfig())
