import math

import numpy as np
import pytest
import torch

from kappagan import geometry as G
from kappagan import model as M
from kappagan.graphdata import Graph
from kappagan.sampling import WrappedNormalParams, wrapped_normal_sample
from kappagan.training import gradient_check
from oracles import fermi_dirac_np

F64 = torch.float64


def identity(t):
    return t


class Fn(torch.nn.Module):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, t):
        return self.fn(t)


def test_mobius_mlp_identity_returns_input():
    u = torch.tensor([[0.2, -0.1]], dtype=F64)
    assert torch.allclose(M.mobius_mlp(u, u, identity, -1.0), u)
    z = torch.tensor([[0.3, 0.3]], dtype=F64)
    assert torch.allclose(M.mobius_mlp(u, z, identity, -1.0), z)


def test_generate_fake_flat_origin_halving():
    # wrapped-normal input is v / 2 at the flat origin; halving then gives v / 4
    gen = M.Generator(2, sigma=1.0)
    gen.core = Fn(lambda t: t / 2)
    v = torch.tensor([[0.8, -0.4]], dtype=F64)
    out = M.generate_fake([0], gen, torch.zeros(1, 2, dtype=F64), None, 0.0, eps=v)
    assert torch.allclose(out, v / 4)


def test_generate_fake_zero_noise_identity_core():
    gen = M.Generator(3, sigma=0.0)
    gen.core = Fn(identity)
    pts = torch.tensor([[0.1, 0.2, 0.3], [0.0, -0.4, 0.1]], dtype=F64)
    out = M.generate_fake([1, 0], gen, pts, np.random.default_rng(0), -1.0)
    assert torch.allclose(out, pts[[1, 0]])


def test_generate_fake_depends_on_rng_and_stays_in_domain():
    gen = M.Generator(4, sigma=3.0, rng=np.random.default_rng(0))
    pts = torch.full((5, 4), 0.45, dtype=F64)
    a = M.generate_fake(range(5), gen, pts, np.random.default_rng(1), -1.0)
    b = M.generate_fake(range(5), gen, pts, np.random.default_rng(2), -1.0)
    assert not torch.allclose(a, b)
    assert (a.norm(dim=-1) < 1).all()


def test_generate_fake_gradients_wrt_mlp_weights():
    rng = np.random.default_rng(3)
    gen = M.Generator(8, sigma=0.5, rng=rng)
    pts = torch.from_numpy(rng.uniform(-0.2, 0.2, (12, 8)))
    eps = torch.from_numpy(rng.normal(size=(12, 8)))
    w = torch.from_numpy(rng.normal(size=(12, 8)))
    params = list(gen.parameters())

    def loss():
        return (M.generate_fake(range(12), gen, pts, None, -0.6, eps=eps) * w).sum()

    report = gradient_check(loss, params, n_coords=150, rng=rng)
    assert report.passed, report


def test_fermi_dirac_examples():
    o = torch.zeros(1, 2, dtype=F64)
    x = torch.tensor([[math.sqrt(2) / 2, 0.0]], dtype=F64)  # flat distance sqrt(2)
    assert M.fermi_dirac_score(o, x, 0.0).item() == pytest.approx(0.5)
    assert M.fermi_dirac_score(o, o, 0.0).item() == pytest.approx(1 / (math.exp(-2) + 1))
    assert M.fermi_dirac_score(o, o, 0.0).item() == pytest.approx(0.88080, abs=1e-5)
    far = torch.tensor([[1e6, 0.0]], dtype=F64)
    assert M.fermi_dirac_score(o, far, 0.0).item() == 0.0
    with pytest.raises(ValueError):
        M.fermi_dirac_score(o, x, 0.0, tau=0.0)


def test_fermi_dirac_matches_scalar_formula_and_is_symmetric():
    rng = np.random.default_rng(0)
    a = torch.from_numpy(rng.uniform(-0.5, 0.5, (200, 3)))
    b = torch.from_numpy(rng.uniform(-0.5, 0.5, (200, 3)))
    s = M.fermi_dirac_score(a, b, -1.0, 1.5, 0.7)
    d = G.distance(a, b, -1.0).numpy()
    assert np.allclose(s.numpy(), [fermi_dirac_np(x, 1.5, 0.7) for x in d])
    assert torch.equal(s, M.fermi_dirac_score(b, a, -1.0, 1.5, 0.7))
    assert ((s > 0) & (s < 1)).all()
    assert (np.diff(s.numpy()[np.argsort(d)]) <= 0).all()


def _half_points():
    # node 0 at origin; nodes 1, 2, 3 all at flat distance sqrt(2) from it, so D = 0.5
    r = math.sqrt(2) / 2
    return torch.tensor([[0.0, 0.0], [r, 0.0], [0.0, r], [-r, 0.0]], dtype=F64)


def test_discriminator_loss_uniform_scores():
    pts = _half_points()
    loss = M.discriminator_loss(pts, [(0, 1)], [(0, 2)], [0], pts[[3]], 0.0)
    assert loss.item() == pytest.approx(3 * math.log(2))


def test_discriminator_loss_perfect_discriminator_hits_clamp():
    pts = torch.tensor([[0.0, 0.0], [0.0, 0.0], [1e3, 0.0]], dtype=F64)
    loss = M.discriminator_loss(pts, [(0, 1)], [(0, 2)], [0], pts[[2]], 0.0, rho=50.0)
    assert loss.item() == pytest.approx(3 * -math.log(1 - 1e-7), rel=1e-3)
    with pytest.raises(ValueError):
        M.discriminator_loss(pts, np.zeros((0, 2)), np.zeros((0, 2)), [0], pts[[2]], 0.0)


def test_discriminator_loss_gradient():
    rng = np.random.default_rng(4)
    pts = torch.from_numpy(rng.uniform(-0.2, 0.2, (30, 16))).requires_grad_()
    pos, neg = rng.integers(0, 30, (40, 2)), rng.integers(0, 30, (40, 2))
    fakes = torch.from_numpy(rng.uniform(-0.2, 0.2, (30, 16)))
    report = gradient_check(lambda: M.discriminator_loss(pts, pos, neg, range(30), fakes, -0.8),
                            [pts], n_coords=150, rng=rng)
    assert report.passed, report


def test_generator_loss_examples():
    pts = _half_points()
    g = Graph.from_edges(4, [(0, 1)])
    fake = pts[[1]]
    # D(u^D, fake) = 0.5; fake sits at u's own neighbour so Reg is evaluated but lam = 0 drops it
    assert M.generator_loss([0], fake, pts, pts, g, 0.0, lam=0.0).item() == pytest.approx(math.log(0.5))
    # Reg = 0 when the fake sits on u's generator embedding
    disc = torch.tensor([[0.0, 0.0], [10.0, 0.0], [0.0, 0.0], [0.0, 0.0]], dtype=F64)
    gen_pts = torch.tensor([[math.sqrt(2) / 2, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]], dtype=F64)
    loss = M.generator_loss([0], gen_pts[[0]], disc, gen_pts, g, 0.0, lam=1.0)
    assert loss.item() == pytest.approx(math.log(0.5))
    with pytest.raises(ValueError):
        M.generator_loss([0], fake, pts, pts, g, 0.0, lam=-1.0)


def test_generator_loss_adds_ricci_term():
    g = Graph.from_edges(2, [(0, 1)])
    gen_pts = torch.tensor([[0.0], [1.0]], dtype=F64)
    fake = torch.tensor([[0.5]], dtype=F64)  # ratio d(fake, v) / d(u, v) = 0.5
    disc = torch.tensor([[0.0], [0.0]], dtype=F64)
    base = M.generator_loss([0], fake, disc, gen_pts, g, 0.0, lam=0.0)
    for lam in (0.5, 2.0):
        full = M.generator_loss([0], fake, disc, gen_pts, g, 0.0, lam=lam)
        assert (full - base).item() == pytest.approx(lam * 0.5)


def test_generator_loss_gradient_with_regulariser():
    rng = np.random.default_rng(5)
    from kappagan.graphdata import generate_sbm

    g = generate_sbm(40, 4, 0.4, 0.05, seed=1)
    gen = M.Generator(16, sigma=0.5, rng=rng)
    gen_tab = torch.from_numpy(rng.uniform(-0.3, 0.3, (40, 16))).requires_grad_()
    disc = torch.from_numpy(rng.uniform(-0.3, 0.3, (40, 16)))
    nodes = np.repeat(np.flatnonzero(g.degrees > 0), 2)
    eps = torch.from_numpy(rng.normal(size=(len(nodes), 16)))

    def loss():
        fakes = M.generate_fake(nodes, gen, gen_tab, None, -0.5, eps=eps)
        return M.generator_loss(nodes, fakes, disc, gen_tab, g, -0.5, lam=1.0)

    report = gradient_check(loss, [gen_tab, *gen.parameters()], n_coords=200, rng=rng)
    assert report.passed, report


def test_embedding_table_io(tmp_path):
    rng = np.random.default_rng(0)
    t = M.EmbeddingTable.random(6, 4, -1.0, rng, scale=0.3, role="generator")
    t.save(tmp_path / "e.bin")
    back = M.EmbeddingTable.load(tmp_path / "e.bin")
    assert torch.equal(back.points, t.points) and back.kappa == -1.0 and back.role == "generator"
    t.to_tsv(tmp_path / "e.tsv")
    names, arr = M.load_embeddings_tsv(tmp_path / "e.tsv")
    assert names == [str(i) for i in range(6)]
    assert np.array_equal(arr, t.points.detach().numpy())
    with pytest.raises(ValueError):
        M.EmbeddingTable(np.zeros((2, 2)), 0.0, role="critic")


def test_embedding_table_projects_into_domain():
    t = M.EmbeddingTable(np.array([[3.0, 4.0]]), -1.0)
    assert t.points.norm().item() < 1


def two_blobs(n_per=100, seed=0, k=-1.0, sigma=0.25):
    rng = np.random.default_rng(seed)
    pts = []
    for mu in ((0.5, 0.0), (-0.5, 0.0)):
        p = WrappedNormalParams(torch.tensor(mu, dtype=F64), sigma, k)
        pts.append(wrapped_normal_sample(p, rng, n=n_per))
    labels = np.repeat([0, 1], n_per)
    perm = rng.permutation(2 * n_per)
    return torch.cat(pts)[perm], labels[perm]


def test_classify_two_blobs():
    from kappagan.evaluation import f1_scores

    pts, y = two_blobs()
    tr, te = np.arange(100), np.arange(100, 200)
    pred, proba = M.classify_nodes(pts, y, tr, te, -1.0)
    assert f1_scores(pred, y[te])[0] > 0.95
    assert proba.shape == (100, 2)
    train_pred, _ = M.classify_nodes(pts, y, tr, tr, -1.0, l2=100.0)
    assert (train_pred == y[tr]).mean() == 1.0


def test_classify_flat_limit_matches_raw_coordinates():
    pts, y = two_blobs(k=-1.0)
    tr, te = np.arange(100), np.arange(100, 200)
    feats = M.tangent_features(pts, 0.0)
    assert np.allclose(feats, pts.numpy())
    a, _ = M.classify_nodes(pts, y, tr, te, 0.0)
    b, _ = M.fit_logistic(pts.numpy(), y, tr, te)
    assert np.array_equal(a, b)


def test_classification_argmax_invariant_to_feature_scale():
    pts, y = two_blobs(seed=1, sigma=0.5)
    feats = M.tangent_features(pts, -1.0)
    tr, te = np.arange(120), np.arange(120, 200)
    base, _ = M.fit_logistic(feats, y, tr, te, l2=1.0)
    for c in (0.1, 3.0):
        # scaling x by c and the inverse penalty by 1/c^2 maps the optimum w -> w / c
        scaled, _ = M.fit_logistic(c * feats, y, tr, te, l2=1.0 / c**2)
        assert np.array_equal(base, scaled)


def test_single_class_training_set_rejected():
    pts, y = two_blobs()
    idx = np.flatnonzero(y == 0)
    with pytest.raises(M.ClassificationError):
        M.classify_nodes(pts, y, idx, idx, -1.0)
