import json
import math

import numpy as np
import pytest

from poregan import spgan
from poregan import tensor as T
from poregan.spgan import (
    SpganConfig,
    SpganModel,
    ae_loss,
    discriminate,
    encode,
    gan_losses,
    generate,
    load_checkpoint,
    mask_central,
    sample_noise,
    save_checkpoint,
    synthesize,
    train,
    train_iteration,
    volumes_to_tensor,
)
from poregan.synthdata import FieldSpec, gaussian_field_volume
from poregan.volume import Phase, Slice2D, central_slice, sample_random_subvolumes

TINY = SpganConfig(volume_size=8, z_dim=4, base_channels=2, batch_size=2, iterations=4, seed=3)
SMALL = SpganConfig(volume_size=16, z_dim=6, base_channels=2, batch_size=2, iterations=4, seed=5)


@pytest.fixture(scope="module")
def corpus():
    return [gaussian_field_volume(FieldSpec(20, 1.5, 0.3, seed=7))]


def batch(cfg, corpus, seed=0):
    return sample_random_subvolumes(corpus[0], cfg.volume_size, cfg.batch_size, seed)


# -- configuration -------------------------------------------------------------

def test_config_defaults_and_validation():
    cfg = SpganConfig()
    assert cfg.h_dim == cfg.z_dim and cfg.lr == 1e-4
    for bad in ({"volume_size": 12}, {"volume_size": 4}, {"z_dim": 0}, {"h_dim": 64, "volume_size": 8},
                {"lr": -1.0}, {"batch_size": 0}, {"iterations": -1}):
        with pytest.raises(ValueError):
            SpganConfig(**bad)
    with pytest.raises(ValueError, match="unknown"):
        SpganConfig.from_dict({"volume_size": 8, "depth": 3})


def test_published_configuration_is_expressible():
    cfg = SpganConfig(volume_size=128, z_dim=512, batch_size=4, iterations=205_000, lr=1e-4)
    assert cfg.levels == 5 and cfg.h_dim == 512
    assert SpganConfig.from_json(cfg.to_json()) == cfg


def test_config_json_round_trip():
    assert SpganConfig.from_json(SMALL.to_json()) == SMALL


# -- shapes and ranges -----------------------------------------------------------

@pytest.mark.parametrize("cfg", [TINY, SMALL])
def test_network_shapes(cfg, corpus):
    model = SpganModel.initialize(cfg)
    x = volumes_to_tensor(batch(cfg, corpus))
    n = cfg.volume_size
    s = mask_central(x)
    assert s.shape == (cfg.batch_size, 1, n, n)
    h = encode(model, s)
    assert h.shape == (cfg.batch_size, cfg.h_dim)
    assert cfg.h_dim < n * n
    z = sample_noise(model, cfg.batch_size, np.random.default_rng(0))
    g = generate(model, z, h)
    assert g.shape == (cfg.batch_size, 1, n, n, n)
    assert np.all(np.abs(g.data) <= 1)
    d = discriminate(model, g)
    assert d.shape == (cfg.batch_size,)
    assert np.all((d.data > 0) & (d.data < 1))


def test_shape_errors(corpus):
    model = SpganModel.initialize(TINY)
    with pytest.raises(ValueError):
        encode(model, T.Tensor(np.zeros((1, 1, 16, 16))))
    with pytest.raises(ValueError):
        generate(model, np.zeros((2, 4)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        generate(model, np.zeros((2, 5)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        discriminate(model, np.zeros((1, 1, 8, 8, 4)))


def test_identical_slices_identical_codes(corpus):
    model = SpganModel.initialize(SMALL)
    vol = batch(SMALL, corpus)[0]
    h = encode(model, [central_slice(vol)] * 3)
    assert np.array_equal(h.data[0], h.data[1]) and np.array_equal(h.data[1], h.data[2])


def test_mask_picks_central_z_plane():
    x = np.arange(2 * 8 * 8 * 8, dtype=float).reshape(2, 1, 8, 8, 8)
    np.testing.assert_array_equal(mask_central(T.Tensor(x)).data, x[:, :, :, :, 4])


def test_initialization_statistics():
    model = SpganModel.initialize(SpganConfig(volume_size=16, z_dim=32, base_channels=8))
    weights = np.concatenate([p.data.ravel() for p in model.parameters() if p.name.endswith("weight")])
    assert abs(weights.std() - 0.02) < 0.001 and abs(weights.mean()) < 0.001
    assert all(np.all(p.data == 0) for p in model.parameters() if p.name.endswith("bias"))
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names))


# -- losses -------------------------------------------------------------------------

def test_ae_loss_zero_for_perfect_reconstruction(corpus, monkeypatch):
    model = SpganModel.initialize(TINY)
    x = volumes_to_tensor(batch(TINY, corpus))
    s = mask_central(x)
    monkeypatch.setattr(spgan, "generate", lambda m, z, h: x)
    assert ae_loss(model, s, np.zeros((2, 4))).item() == 0.0


def test_ae_loss_counts_pixels_and_averages_batch(corpus, monkeypatch):
    model = SpganModel.initialize(TINY)
    x = volumes_to_tensor(batch(TINY, corpus))
    s = T.Tensor(mask_central(x).data)
    flipped = T.Tensor(x.data.copy())
    flipped.data[0, 0, 0, 0, 4] *= -1  # one wrong pixel in the first sample only
    monkeypatch.setattr(spgan, "generate", lambda m, z, h: flipped)
    assert ae_loss(model, s, np.zeros((2, 4))).item() == pytest.approx(4.0 / 2)


def test_ae_loss_non_negative(corpus):
    model = SpganModel.initialize(TINY)
    rng = np.random.default_rng(1)
    for seed in range(3):
        s = mask_central(volumes_to_tensor(batch(TINY, corpus, seed)))
        assert ae_loss(model, s, sample_noise(model, 2, rng)).item() >= 0


def test_gan_losses_at_indifferent_discriminator(corpus):
    model = SpganModel.initialize(TINY)
    model.discriminator.fc_w.data[...] = 0
    x = volumes_to_tensor(batch(TINY, corpus))
    out = gan_losses(model, x, mask_central(x), sample_noise(model, 2, np.random.default_rng(0)))
    assert np.all(out.d_real.data == 0.5) and np.all(out.d_fake.data == 0.5)
    assert out.d_loss.item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert out.g_loss.item() == pytest.approx(math.log(0.5), abs=1e-12)


def test_gan_losses_finite_at_saturation(corpus):
    model = SpganModel.initialize(TINY)
    model.discriminator.fc_b.data[...] = 1e4
    x = volumes_to_tensor(batch(TINY, corpus))
    out = gan_losses(model, x, mask_central(x), sample_noise(model, 2, np.random.default_rng(0)))
    assert math.isfinite(out.d_loss.item()) and math.isfinite(out.g_loss.item())


# -- gradients through the full model ------------------------------------------

def generic_model(cfg):
    """Zero biases put some pre-activations exactly on a ReLU kink, where
    finite differences are meaningless; jitter them to a generic point."""
    model = SpganModel.initialize(cfg)
    rng = np.random.default_rng(17)
    for p in model.parameters():
        if p.name.endswith("bias"):
            p.data[...] = rng.normal(0.0, 0.05, p.shape)
    return model


# differences of a loss of size ~100 carry ~1e-9 roundoff at h = 1e-5, so
# gradients below this floor are compared in absolute terms
FLOOR = 1e-5


def probe_indices(p, count=3, seed=0):
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.choice(p.size, size=min(count, p.size), replace=False)]


@pytest.mark.parametrize("network", ["encoder", "generator"])
def test_ae_loss_gradcheck(corpus, network):
    model = generic_model(SMALL)
    x = volumes_to_tensor(batch(SMALL, corpus))
    s = T.Tensor(mask_central(x).data)
    z = sample_noise(model, 2, np.random.default_rng(2))
    for p in model.parameters(network):
        err = T.grad_check(lambda: ae_loss(model, s, z), p, 1e-5, probe_indices(p), floor=FLOOR)
        assert err < 1e-3, p.name


def test_gan_losses_gradcheck(corpus):
    model = generic_model(SMALL)
    x = volumes_to_tensor(batch(SMALL, corpus))
    s = T.Tensor(mask_central(x).data)
    z = sample_noise(model, 2, np.random.default_rng(3))
    for p in model.parameters("discriminator"):
        f = lambda: gan_losses(model, x, s, z).d_loss  # noqa: E731
        assert T.grad_check(f, p, 1e-5, probe_indices(p), floor=FLOOR) < 1e-3, p.name
    for p in model.parameters("generator", "encoder"):
        f = lambda: gan_losses(model, x, s, z).g_loss  # noqa: E731
        assert T.grad_check(f, p, 1e-5, probe_indices(p), floor=FLOOR) < 1e-3, p.name


# -- the update schedule ----------------------------------------------------------

def test_each_update_touches_one_network(corpus, monkeypatch):
    model = SpganModel.initialize(SMALL)
    model.optimizers = {k: T.AdamState(lr=1e-3) for k in model.optimizers}
    calls = []
    real_step = spgan._step

    def spy(m, network, loss, params):
        before = m.snapshot()
        assert {p.name for p in params} == {p.name for p in m.parameters(network)}
        real_step(m, network, loss, params)
        after = m.snapshot()
        changed = {name.split(".")[0] for name in before if not np.array_equal(before[name], after[name])}
        calls.append((network, changed))

    monkeypatch.setattr(spgan, "_step", spy)
    train_iteration(model, batch(SMALL, corpus), np.random.default_rng(0))
    assert [c[0] for c in calls] == ["encoder", "generator", "discriminator", "generator"]
    for network, changed in calls:
        assert changed == {network}


def test_generator_state_shared_by_both_updates(corpus):
    model = SpganModel.initialize(SMALL)
    train_iteration(model, batch(SMALL, corpus), np.random.default_rng(0))
    t = {k: v.t for k, v in model.optimizers.items()}
    assert t == {"encoder": 1, "generator": 2, "discriminator": 1}


def test_zero_learning_rate_is_noop(corpus):
    cfg = SpganConfig(volume_size=8, z_dim=4, base_channels=2, batch_size=2, iterations=3, lr=0.0, seed=1)
    init = SpganModel.initialize(cfg).snapshot()
    model, log = train(corpus, cfg)
    after = model.snapshot()
    assert all(np.array_equal(init[k], after[k]) for k in init)
    assert len(log.records) == 3


def test_zero_iterations_returns_initialization(corpus):
    cfg = SpganConfig(volume_size=8, z_dim=4, base_channels=2, iterations=0, seed=4)
    model, log = train(corpus, cfg)
    init_rng, _ = spgan._seed_streams(4)
    init = SpganModel.initialize(cfg, init_rng).snapshot()
    assert all(np.array_equal(init[k], v) for k, v in model.snapshot().items())
    assert log.records == []


def test_training_deterministic(corpus):
    a, la = train(corpus, TINY)
    b, lb = train(corpus, TINY)
    sa, sb = a.snapshot(), b.snapshot()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert la.to_csv() == lb.to_csv()
    c, _ = train(corpus, SpganConfig(**{**TINY.__dict__, "seed": TINY.seed + 1}))
    assert any(not np.array_equal(sa[k], v) for k, v in c.snapshot().items())


def test_losses_are_finite_and_probabilities_bounded(corpus):
    _, log = train(corpus, TINY)
    for name in ("ae_loss", "d_loss", "g_loss"):
        assert np.all(np.isfinite(log.column(name)))
    for name in ("d_real", "d_fake"):
        assert np.all((log.column(name) > 0) & (log.column(name) < 1))


def test_resume_is_bit_exact(corpus, tmp_path):
    full_cfg = SpganConfig(volume_size=8, z_dim=4, base_channels=2, batch_size=2, iterations=6, seed=2)
    half_cfg = SpganConfig(**{**full_cfg.__dict__, "iterations": 3})
    straight, straight_log = train(corpus, full_cfg)
    train(corpus, half_cfg, checkpoint_dir=tmp_path)
    resumed, resumed_log = train(corpus, full_cfg, resume_from=tmp_path)
    sa, sb = straight.snapshot(), resumed.snapshot()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert straight_log.to_csv() == resumed_log.to_csv()
    for k in straight.optimizers:
        assert straight.optimizers[k].t == resumed.optimizers[k].t


def test_resume_rejects_different_architecture(corpus, tmp_path):
    train(corpus, TINY, checkpoint_dir=tmp_path)
    with pytest.raises(ValueError):
        train(corpus, SpganConfig(**{**TINY.__dict__, "z_dim": 5}), resume_from=tmp_path)


def test_corpus_too_small(corpus):
    with pytest.raises(ValueError):
        train(corpus, SpganConfig(volume_size=32, z_dim=4, base_channels=2, iterations=1))


# -- checkpoints and synthesis ---------------------------------------------------------

def test_checkpoint_round_trip(corpus, tmp_path):
    model, log = train(corpus, TINY)
    save_checkpoint(model, tmp_path, log=log)
    loaded = load_checkpoint(tmp_path)
    assert loaded.config == TINY
    x = volumes_to_tensor(batch(TINY, corpus))
    s = mask_central(x)
    z = sample_noise(model, 2, np.random.default_rng(8))
    assert np.array_equal(generate(model, z, encode(model, s)).data, generate(loaded, z, encode(loaded, s)).data)
    assert np.array_equal(discriminate(model, x).data, discriminate(loaded, x).data)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["dtype"] == "float64-le"


def test_load_checkpoint_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)


def test_synthesize_contract(corpus):
    model = SpganModel.initialize(TINY)
    s = central_slice(batch(TINY, corpus)[0])
    out = synthesize(model, s, 5, seed=11)
    assert len(out.volumes) == 5
    for vol, centre, l2, frac in zip(out.volumes, out.central_slices, out.l2_distances, out.mismatch_fractions):
        assert vol.dims == (8, 8, 8)
        assert set(np.unique(vol.data)) <= {Phase.VOID, Phase.SOLID}
        assert np.array_equal(centre.data, vol.data[:, :, 4])
        wrong = np.count_nonzero(centre.data != s.data)
        assert l2 == math.sqrt(wrong) and frac == wrong / 64
    again = synthesize(model, s, 5, seed=11)
    assert all(a == b for a, b in zip(out.volumes, again.volumes))
    other = synthesize(model, s, 5, seed=12)
    assert any(a != b for a, b in zip(out.volumes, other.volumes))
    assert out.report()["count"] == 5


def test_synthesize_rejects_bad_slice():
    model = SpganModel.initialize(TINY)
    with pytest.raises(ValueError):
        synthesize(model, Slice2D(np.zeros((16, 16), dtype=np.uint8)), 1)
    with pytest.raises(ValueError):
        synthesize(model, Slice2D(np.zeros((8, 8), dtype=np.uint8)), 0)
