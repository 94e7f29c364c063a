import numpy as np
import pytest

from rgt.autodiff import Tensor, bilinear_sample, grad_check, no_grad
from rgt.model import (RGT, BranchOutput, CrossFusion, ImageBranch, RadiomicsBranch, RGTConfig,
                       cls_attention_map, full_model_gradcheck, grid_points, patchify)

TINY = RGTConfig.tiny()


def randomize(module, rng, scale=0.3):
    for _, p in module.named_parameters():
        p.data[...] = rng.normal(scale=scale, size=p.shape)


# ------------------------------------------------------------ config
@pytest.mark.parametrize("kw", [dict(dim=10, heads=4), dict(image_depth=0), dict(patch_size=5),
                                dict(classifier="max"), dict(dtype="float16")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        RGTConfig(**kw)


# ------------------------------------------------------------ tokenization
def test_tokenize_shape_224():
    cfg = RGTConfig(image_size=224, patch_size=16, dim=8, heads=2, grid_size=14, dtype="float64")
    branch = ImageBranch(cfg, np.random.default_rng(0))
    assert branch.tokenize(np.zeros((1, 224, 224))).shape == (1, 197, 8)


def test_tokenize_rejects_indivisible():
    with pytest.raises(ValueError):
        patchify(np.zeros((1, 10, 10)), 3)


def test_zero_image_zero_bias_gives_zero_patch_embeddings():
    branch = ImageBranch(TINY, np.random.default_rng(0))
    assert np.all(branch.feature_grid(np.zeros((2, 12, 12))).data == 0)


def test_tokenize_gradcheck():
    rng = np.random.default_rng(1)
    branch = ImageBranch(TINY, rng)
    randomize(branch, rng)
    img = rng.normal(size=(2, 12, 12))
    params = [branch.patch_embed.weight, branch.patch_embed.bias, branch.pos_embed.weight,
              branch.cls_token]
    assert grad_check(lambda: (branch.tokenize(img) ** 2).sum(), params) < 1e-5


# ------------------------------------------------------------ progressive sampling
def test_zero_offsets_equal_grid_sampling_bitwise():
    cfg = RGTConfig(image_size=64, dtype="float64")
    branch = ImageBranch(cfg, np.random.default_rng(0))
    grid = branch.feature_grid(np.random.default_rng(1).normal(size=(2, 64, 64)))
    tokens, points = branch.sample_tokens(grid)
    base = np.broadcast_to(grid_points(16, 8), (2, 64, 2))
    assert np.array_equal(points.data, base)
    expected = bilinear_sample(grid, Tensor(base.copy())) + branch._position(Tensor(base.copy()))
    assert np.array_equal(tokens.data, expected.data)


@pytest.mark.parametrize("seed", range(4))
def test_points_stay_inside_grid(seed):
    rng = np.random.default_rng(seed)
    cfg = RGTConfig.tiny(sampling_iters=6)
    branch = ImageBranch(cfg, rng)
    for head in branch.offsets:
        head.weight.data[...] = rng.normal(scale=50.0, size=head.weight.shape)
        head.bias.data[...] = rng.normal(scale=50.0, size=head.bias.shape)
    _, pts = branch.sample_tokens(branch.feature_grid(rng.normal(size=(3, 12, 12))))
    assert pts.data.min() >= 0 and pts.data.max() <= cfg.feature_size - 1


def test_progressive_sampling_gradcheck_8x8():
    rng = np.random.default_rng(2)
    cfg = RGTConfig.tiny(image_size=16, patch_size=2, grid_size=4, sampling_iters=2)
    branch = ImageBranch(cfg, rng)
    randomize(branch, rng, 0.5)
    grid = Tensor(rng.normal(size=(1, 8, 8, cfg.dim)), requires_grad=True)
    params = [grid] + [p for n, p in branch.named_parameters()
                       if n.startswith(("offsets", "pos_embed"))]
    f = lambda: (branch.sample_tokens(grid)[0] ** 2).sum()
    _, pts = branch.sample_tokens(grid)
    assert not np.allclose(pts.data, grid_points(8, 4))
    assert grad_check(f, params) < 1e-4


# ------------------------------------------------------------ radiomics branch
def test_radiomics_permutation_invariance():
    rng = np.random.default_rng(3)
    cfg = RGTConfig.tiny(num_radiomics=6)
    branch = RadiomicsBranch(cfg, rng)
    randomize(branch, rng)
    r = rng.normal(size=(2, 6))
    a = branch(r).cls.data
    perm = rng.permutation(6)
    branch.embed_weight.data[...] = branch.embed_weight.data[perm]
    branch.embed_bias.data[...] = branch.embed_bias.data[perm]
    b = branch(r[:, perm]).cls.data
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_radiomics_zero_input_ignores_embedding_weights():
    rng = np.random.default_rng(4)
    branch = RadiomicsBranch(TINY, rng)
    a = branch(np.zeros((1, 2))).cls.data
    branch.embed_weight.data[...] = rng.normal(size=branch.embed_weight.shape)
    assert np.array_equal(a, branch(np.zeros((1, 2))).cls.data)


def test_radiomics_rejects_nan_and_shape():
    branch = RadiomicsBranch(TINY, np.random.default_rng(0))
    with pytest.raises(ValueError):
        branch(np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        branch(np.zeros((1, 3)))


def test_radiomics_branch_gradcheck():
    rng = np.random.default_rng(5)
    branch = RadiomicsBranch(TINY, rng)
    randomize(branch, rng)
    r = rng.normal(size=(2, 2))
    params = [p for _, p in branch.named_parameters()]
    assert grad_check(lambda: (branch(r).cls ** 2).sum(), params) < 1e-4


# ------------------------------------------------------------ fusion
def test_fusion_identical_tokens_attend_to_that_value():
    rng = np.random.default_rng(6)
    fusion = CrossFusion(8, 2, rng, np.float64)
    q = Tensor(rng.normal(size=(1, 1, 8)))
    tok = rng.normal(size=8)
    kv = Tensor(np.tile(tok, (1, 5, 1)))
    out, w = fusion.attn_i(q, kv)
    expected = fusion.attn_i.out(fusion.attn_i.v(Tensor(tok[None, None])))
    assert np.allclose(out.data, expected.data, rtol=0, atol=1e-12)
    assert np.allclose(w.data, 0.2)


def test_fusion_zero_output_projection_is_identity():
    rng = np.random.default_rng(7)
    fusion = CrossFusion(8, 2, rng, np.float64)
    for attn in (fusion.attn_i, fusion.attn_r):
        attn.out.weight.data[...] = 0
        attn.out.bias.data[...] = 0
    ci, cr = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8)))
    a, b = fusion(ci, cr, Tensor(rng.normal(size=(2, 4, 8))), Tensor(rng.normal(size=(2, 3, 8))))
    assert np.array_equal(a.data, ci.data) and np.array_equal(b.data, cr.data)


def test_fusion_gradcheck():
    rng = np.random.default_rng(8)
    fusion = CrossFusion(8, 2, rng, np.float64)
    randomize(fusion, rng)
    ci = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    ti = Tensor(rng.normal(size=(2, 4, 8)), requires_grad=True)
    cr, tr = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 3, 8)))

    def f():
        a, b = fusion(ci, cr, ti, tr)
        return (a * b).sum()

    params = [ci, ti] + [p for _, p in fusion.named_parameters()]
    assert grad_check(f, params) < 1e-4


# ------------------------------------------------------------ classifier
@pytest.mark.parametrize("classifier", ["average", "concat"])
def test_zero_logits_give_half(classifier):
    model = RGT(RGTConfig.tiny(classifier=classifier, num_classes=8))
    z = Tensor(np.zeros((3, 8)))
    probs, _ = model.classify(z, z)
    assert probs.shape == (3, 8) and np.all(probs.data == 0.5)


def test_classifier_gradcheck():
    rng = np.random.default_rng(9)
    model = RGT(TINY)
    ci = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    cr = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    params = [ci, cr, model.head_i.weight, model.head_i.bias, model.head_r.weight]
    assert grad_check(lambda: model.classify(ci, cr)[0].sum(), params) < 1e-5


# ------------------------------------------------------------ attention maps
def fake_output(weights_row, cfg, points=None):
    n = weights_row.shape[-1]
    w = np.zeros((1, 2, n + 1, n + 1))
    w[0, :, 0, 1:] = weights_row
    if points is None:
        points = grid_points(cfg.feature_size, cfg.grid_size)[None]
    return BranchOutput(None, None, w, points, "image")


def test_uniform_attention_gives_flat_map():
    cfg = RGTConfig()
    m = cls_attention_map(fake_output(np.full(64, 1 / 64), cfg), cfg)[0]
    assert m.shape == (64, 64) and np.allclose(m, 1.0, atol=1e-12)


def test_delta_attention_peaks_at_token():
    cfg = RGTConfig()
    row = np.zeros(64)
    row[8 * 2 + 5] = 1.0  # grid cell (row 2, col 5)
    m = cls_attention_map(fake_output(row, cfg), cfg)[0]
    assert m.max() == 1.0
    peak = np.argwhere(m == 1.0)
    centre = ((np.array([2, 5]) + 0.5) * 8 - 0.5)
    assert np.all(np.abs(peak.mean(axis=0) - centre) <= 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_model_maps_in_unit_range_with_max_one(seed):
    rng = np.random.default_rng(seed)
    model = RGT(TINY, seed=seed)
    randomize(model, rng)
    with no_grad():
        out = model(rng.normal(size=(3, 12, 12)), rng.normal(size=(3, 2)))
    maps = cls_attention_map(out.image, TINY)
    assert maps.shape == (3, 12, 12)
    assert maps.min() >= 0 and np.all(maps.max(axis=(1, 2)) == 1.0)


def test_radiomics_branch_map_is_an_error():
    model = RGT(TINY)
    out = model(np.zeros((1, 12, 12)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        cls_attention_map(out.radiomics, TINY)


# ------------------------------------------------------------ whole model
def test_projections_are_unit_and_eval_is_pure():
    rng = np.random.default_rng(11)
    model = RGT(RGTConfig(dtype="float64")).eval()
    img, rad = rng.normal(size=(2, 64, 64)), rng.normal(size=(2, 107))
    a, b = model(img, rad), model(img, rad)
    assert np.array_equal(a.probs.data, b.probs.data)
    for z in (a.z_i, a.z_r):
        assert np.allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-6)
    w = a.image.attention
    assert np.allclose(w.sum(-1), 1.0)


@pytest.mark.parametrize("project_after_fusion", [True, False])
def test_projection_switch(project_after_fusion):
    model = RGT(RGTConfig.tiny(project_after_fusion=project_after_fusion))
    out = model(np.zeros((2, 12, 12)), np.zeros((2, 2)))
    assert out.z_i.shape == (2, 4)


def test_state_dict_round_trip():
    a, b = RGT(TINY, seed=1), RGT(TINY, seed=2)
    b.load_state_dict(a.state_dict())
    x, r = np.ones((1, 12, 12)), np.ones((1, 2))
    assert np.array_equal(a(x, r).probs.data, b(x, r).probs.data)


@pytest.mark.slow
def test_full_model_gradcheck_tiny():
    report = full_model_gradcheck()
    assert len(report) == len(list(RGT(TINY).named_parameters()))
    assert max(report.values()) < 1e-4
