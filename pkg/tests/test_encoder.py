import pytest
import torch
from hypothesis import given, settings, strategies as st

from mcm.encoder import BMB, HierarchicalEncoder, PatchEmbed, PatchMerge, WindowSpec, pair_images

from conftest import fd_check, weighted_sum


def numbered_sequence(T, H=4, W=4):
    # frame i is filled with i so window membership is readable from values
    return torch.arange(T, dtype=torch.float32)[:, None, None].expand(T, H, W).clone()


# --- pair_images ---------------------------------------------------------

def test_padding_rule_start_of_cycle():
    seq = numbered_sequence(10)
    f0 = pair_images(seq, WindowSpec(t=1, K=2, T=10))
    assert f0[:, 1, 0, 0].tolist() == [0, 0, 1, 2, 3]


def test_padding_rule_end_of_cycle():
    T = 8
    f0 = pair_images(numbered_sequence(T), WindowSpec(t=T - 1, K=2, T=T))
    assert f0[:, 1, 0, 0].tolist() == [T - 3, T - 2, T - 1, T - 1, T - 1]


def test_degenerate_window():
    seq = torch.rand(6, 4, 4)
    f0 = pair_images(seq, WindowSpec(t=3, K=0, T=6))
    assert f0.shape == (1, 2, 4, 4)
    assert torch.equal(f0[0, 0], seq[0]) and torch.equal(f0[0, 1], seq[3])


def test_reference_channel_constant():
    seq = torch.rand(9, 8, 8)
    f0 = pair_images(seq, WindowSpec(t=4, K=3, T=9))
    assert all(torch.equal(f0[i, 0], seq[0]) for i in range(7))


def test_window_errors():
    with pytest.raises(ValueError, match="empty sequence"):
        WindowSpec(t=0, K=1, T=0)
    with pytest.raises(ValueError, match="out of range"):
        WindowSpec(t=5, K=1, T=5)
    with pytest.raises(ValueError):
        pair_images(torch.rand(4, 8, 8), WindowSpec(t=0, K=1, T=5))


# --- patch ops -----------------------------------------------------------

def test_patch_embed_zero():
    pe = PatchEmbed(2, 16)
    with torch.no_grad():
        pe.proj.bias.zero_()
    assert torch.equal(pe(torch.zeros(5, 2, 32, 32)), torch.zeros(5, 16, 8, 8))


def test_patch_embed_shape():
    assert PatchEmbed(2, 16)(torch.rand(5, 2, 128, 128)).shape == (5, 16, 32, 32)


def test_patch_embed_ones_patch_is_weight_sum():
    pe = PatchEmbed(2, 3)
    with torch.no_grad():
        pe.proj.weight.normal_()
        pe.proj.bias.zero_()
    x = torch.zeros(1, 2, 32, 32)
    x[0, :, :4, :4] = 1.0
    out = pe(x)[0, :, 0, 0]
    expected = pe.proj.weight.sum(dim=(1, 2, 3))
    assert torch.allclose(out, expected, atol=1e-5)


def test_patch_embed_indivisible():
    with pytest.raises(ValueError, match="shape not divisible"):
        PatchEmbed()(torch.rand(1, 2, 48, 32))


def test_patch_merge_shape_and_zero():
    pm = PatchMerge(16)
    assert pm(torch.rand(5, 16, 32, 32)).shape == (5, 32, 16, 16)
    assert torch.equal(pm(torch.zeros(2, 16, 4, 4)), torch.zeros(2, 32, 2, 2))


def test_patch_merge_row_major_order():
    x = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    assert PatchMerge.gather(x).flatten().tolist() == [1.0, 2.0, 3.0, 4.0]
    # two channels: corners are concatenated, channels within each corner
    x2 = torch.stack([x[0, 0], 10 * x[0, 0]]).unsqueeze(0)
    assert PatchMerge.gather(x2).flatten().tolist() == [1, 10, 2, 20, 3, 30, 4, 40]


def test_patch_merge_odd():
    with pytest.raises(ValueError):
        PatchMerge(4)(torch.rand(1, 4, 3, 4))


# --- bmb -----------------------------------------------------------------

def test_bmb_zero_input():
    torch.manual_seed(0)
    b = BMB(8, 4)
    with torch.no_grad():
        for lin in (b.mlp[0], b.mlp[2]):
            lin.bias.zero_()
        for p in (b.bism.fwd, b.bism.bwd):
            p.dt_proj.bias.zero_()
    assert torch.equal(b(torch.zeros(3, 8, 4, 4)), torch.zeros(3, 8, 4, 4))


def test_bmb_identity_when_sublayers_vanish():
    torch.manual_seed(0)
    b = BMB(8, 4)
    b.bism.forward = lambda f: torch.zeros_like(f)
    with torch.no_grad():
        b.mlp[2].weight.zero_()
        b.mlp[2].bias.zero_()
    x = torch.randn(3, 8, 4, 4)
    assert torch.equal(b(x), x)


def test_bmb_channel_mismatch():
    with pytest.raises(ValueError, match="channel mismatch"):
        BMB(8)(torch.zeros(3, 4, 2, 2))


# --- encode --------------------------------------------------------------

def test_encode_shapes_128():
    enc = HierarchicalEncoder(c_base=16)
    with torch.no_grad():
        feats = enc(torch.rand(5, 2, 128, 128))
    assert [tuple(f.shape) for f in feats] == [(5, 16, 32, 32), (5, 32, 16, 16), (5, 64, 8, 8), (5, 128, 4, 4)]


def test_encode_smallest_input():
    enc = HierarchicalEncoder(c_base=16)
    with torch.no_grad():
        assert enc(torch.rand(3, 2, 32, 32))[-1].shape == (3, 128, 1, 1)


@settings(max_examples=8, deadline=None)
@given(h=st.integers(1, 3), w=st.integers(1, 3), n_f=st.sampled_from([1, 3, 5]))
def test_encode_shape_property(h, w, n_f):
    enc = HierarchicalEncoder(c_base=4, d_state=2)
    H, W = 32 * h, 32 * w
    with torch.no_grad():
        feats = enc(torch.rand(n_f, 2, H, W))
    for i, f in enumerate(feats):
        assert f.shape == (n_f, 4 * 2 ** i, H // (4 * 2 ** i), W // (4 * 2 ** i))


def test_encode_deterministic():
    torch.manual_seed(3)
    enc = HierarchicalEncoder(c_base=4)
    x = torch.rand(3, 2, 32, 32)
    a, b = enc(x), enc(x)
    assert all(torch.equal(u, v) for u, v in zip(a, b))


def test_encode_batched_matches_unbatched():
    torch.manual_seed(4)
    enc = HierarchicalEncoder(c_base=4)
    x = torch.rand(2, 3, 2, 32, 32)
    with torch.no_grad():
        batched = enc(x)
        single = enc(x[1])
    assert all(torch.allclose(b[1], s, atol=1e-6) for b, s in zip(batched, single))


def test_encode_order_sensitive():
    torch.manual_seed(5)
    enc = HierarchicalEncoder(c_base=4)
    seq = torch.rand(5, 32, 32)
    f0 = pair_images(seq, WindowSpec(t=2, K=2, T=5))
    perm = torch.tensor([2, 0, 4, 1, 3])
    with torch.no_grad():
        a = enc(f0)
        b = enc(f0[perm])
    # compare at identical frame positions; BiSM makes every position depend on order
    assert not torch.allclose(a[0][2], b[0][0])
    assert not torch.allclose(a[3], b[3][torch.argsort(perm)])


def test_encode_gradients(double):
    torch.manual_seed(6)
    enc = HierarchicalEncoder(c_base=4, d_state=2)
    x = torch.rand(3, 2, 32, 32, requires_grad=True)
    fn = lambda: sum(weighted_sum(f, seed=i) for i, f in enumerate(enc(x)))
    err = fd_check(fn, [x] + list(enc.parameters()), max_elems=6, n_dirs=1)
    assert err < 1e-3


def test_patch_and_bmb_gradients(double):
    torch.manual_seed(7)
    pe, pm, b = PatchEmbed(2, 4), PatchMerge(4), BMB(4, 2)
    x = torch.rand(3, 2, 32, 32, requires_grad=True)
    for mod, fn in [(pe, lambda: weighted_sum(pe(x))),
                    (pm, lambda: weighted_sum(pm(pe(x)))),
                    (b, lambda: weighted_sum(b(pe(x))))]:
        assert fd_check(fn, [x] + list(mod.parameters()), max_elems=10) < 1e-3
