import math

import numpy as np
import pytest
import torch

from midfusion.prompters import (FEP, IP, MFP, UEP, PrompterBank, fep_forward, fovea, init_prompter_bank,
                                 ip_forward, mfp_forward, uep_forward)
from midfusion.tokens import Segments, ShapeError, TokenSeq

import oracles
from helpers import randomize, swapped_mfp, symmetric_mfp


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a))


def random_tokens(rng, dim, segments: Segments) -> TokenSeq:
    data = torch.from_numpy(rng.normal(size=(1, segments.total, dim)))
    return TokenSeq(data, segments)


def random_segments(rng, prompt_max=2) -> Segments:
    tg = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    sg = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    return Segments(int(rng.integers(0, prompt_max + 1)), tg, sg)


def image_np(tokens: TokenSeq) -> np.ndarray:
    return tokens.image[0].numpy()


# ---------------------------------------------------------------------------
# formula oracles on random instances


@pytest.mark.parametrize("seed", range(25))
def test_uep_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    dim, low = int(rng.choice([4, 8, 16])), int(rng.choice([1, 2, 3, 8]))
    uep = randomize(UEP(dim, low).double(), seed)
    seq = random_tokens(rng, dim, random_segments(rng))
    with torch.no_grad():
        got = uep_forward(uep, seq)[0].numpy()
    want = oracles.per_segment(lambda f: oracles.uep_delta(uep, f), [image_np(seq)], seq.segments.grids)
    assert rel_err(got, want) < 1e-10


@pytest.mark.parametrize("seed", range(25))
def test_ip_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    dim, low = int(rng.choice([4, 8, 16])), int(rng.choice([1, 2, 3, 8]))
    ip = randomize(IP(dim, low).double(), seed)
    grid = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    n = grid[0] * grid[1]
    prompted, prompting = (torch.from_numpy(rng.normal(size=(1, n, dim))) for _ in range(2))
    with torch.no_grad():
        got = ip_forward(ip, prompted, prompting, grid)[0].numpy()
    want = oracles.map_to_tokens(oracles.ip_out(ip, oracles.tokens_to_map(prompted[0].numpy(), *grid),
                                                oracles.tokens_to_map(prompting[0].numpy(), *grid)))
    assert rel_err(got, want) < 1e-10


@pytest.mark.parametrize("seed", range(25))
def test_mfp_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    dim, low = int(rng.choice([4, 8, 16])), int(rng.choice([1, 2, 3, 16]))
    mfp = randomize(MFP(dim, low).double(), seed)
    segs = random_segments(rng)
    tv, tt = random_tokens(rng, dim, segs), random_tokens(rng, dim, segs)
    with torch.no_grad():
        fused = mfp_forward(mfp, tv, tt)
    assert fused.segments == segs.image_only()
    want = oracles.per_segment(lambda a, b: oracles.mfp_out(mfp, a, b), [image_np(tv), image_np(tt)], segs.grids)
    assert rel_err(fused.data[0].numpy(), want) < 1e-10


@pytest.mark.parametrize("seed", range(25))
def test_fep_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    dim, low = int(rng.choice([4, 8, 16])), int(rng.choice([1, 2, 3, 8]))
    fep = randomize(FEP(dim, low).double(), seed)
    segs = random_segments(rng, prompt_max=0)
    p, f = (torch.from_numpy(rng.normal(size=(1, segs.total, dim))) for _ in range(2))
    with torch.no_grad():
        got = fep_forward(fep, p, f, segs)[0].numpy()
    want = oracles.per_segment(lambda a, b: oracles.fep_out(fep, a, b), [p[0].numpy(), f[0].numpy()], segs.grids)
    assert rel_err(got, want) < 1e-10


# ---------------------------------------------------------------------------
# hand-evaluated instances


def _fill(module, value=1.0):
    with torch.no_grad():
        for name, p in module.named_parameters():
            p.fill_(0.0 if name.endswith("bias") else value)


def test_uep_all_ones_on_2x2_grid():
    uep = UEP(2, 1).double()
    _fill(uep)
    f = torch.zeros(1, 2, 2, 2, dtype=torch.float64)
    f[0, 0] = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    # low = f0 + f1; std and merge are identities; the dilated taps (offset 2) all fall
    # outside a 2x2 grid except the center; the depthwise 3x3 sees the whole grid
    low = [[1, 2], [3, 4]]
    total = 10
    want = [[0.5 * (2 * v + total) * (1 + math.erf((2 * v + total) / math.sqrt(2))) for v in row] for row in low]
    got = uep.delta(f)
    assert torch.allclose(got[0, 0], torch.tensor(want, dtype=torch.float64), rtol=1e-14, atol=0)
    assert torch.equal(got[0, 0], got[0, 1])
    assert torch.equal(uep(f), f + got)


def test_ip_hand_picked_weights():
    ip = IP(2, 2).double()
    with torch.no_grad():
        for p in ip.parameters():
            p.zero_()
        ip.down_prompted.weight[:, :, 0, 0] = torch.eye(2)
        ip.down_prompting.weight[:, :, 0, 0] = torch.eye(2)
        ip.merge.weight[0, 0, 0, 0] = 1.0  # pooled channel
        ip.merge.weight[1, 1, 0, 0] = 1.0
        ip.merge.weight[1, 2, 0, 0] = 1.0
        ip.up.weight[:, :, 0, 0] = torch.eye(2)
    p = torch.arange(8, dtype=torch.float64).reshape(1, 2, 2, 2)
    q = torch.arange(8, 16, dtype=torch.float64).reshape(1, 2, 2, 2)
    want = p.clone()
    want[0, 0] += (q[0, 0] + q[0, 1]) / 2
    want[0, 1] += p[0, 0] + p[0, 1]
    assert torch.equal(ip(p, q), want)


def test_ip_zero_up_is_identity():
    ip = randomize(IP(4, 2).double(), 0)
    with torch.no_grad():
        ip.up.weight.zero_()
        ip.up.bias.zero_()
    p = torch.randn(1, 4, 3, 2, dtype=torch.float64)
    assert torch.equal(ip(p, torch.randn_like(p)), p)


def test_ip_constant_prompting_pools_to_constant():
    ip = randomize(IP(4, 3).double(), 1)
    with torch.no_grad():
        ip.down_prompting.weight.zero_()
        ip.down_prompting.bias.fill_(0.75)
    pooled = ip.pooled(torch.randn(2, 4, 3, 3, dtype=torch.float64))
    assert pooled.shape == (2, 1, 3, 3)
    assert torch.all(pooled == 0.75)


def test_ip_merge_takes_d_plus_one_channels():
    assert IP(16, 8).merge.in_channels == 9


def test_ip_rejects_mismatched_inputs():
    ip = IP(4, 2).double()
    with pytest.raises(ShapeError):
        ip_forward(ip, torch.zeros(1, 4, 4, dtype=torch.float64), torch.zeros(1, 6, 4, dtype=torch.float64), (2, 2))


def test_mfp_equal_inputs():
    mfp = randomize(MFP(6, 3).double(), 2)
    with torch.no_grad():
        mfp.down_t.load_state_dict(mfp.down_v.state_dict())
    f = torch.randn(2, 6, 3, 3, dtype=torch.float64)
    parts = mfp.parts(f, f)
    low = parts["low_v"]
    assert torch.all(parts["only_v"] == 0.5) and torch.all(parts["only_t"] == 0.5)
    assert torch.allclose(parts["fused_low"], low * low + low, rtol=1e-14, atol=1e-14)


def test_mfp_weight_channels():
    mfp = MFP(16, 16)
    assert mfp.weight_fc.in_channels == 80 and mfp.weight_fc.out_channels == 2


def test_mfp_rejects_segment_mismatch():
    mfp = MFP(4, 2).double()
    a = TokenSeq(torch.zeros(1, 8, 4, dtype=torch.float64), Segments(0, (2, 2), (2, 2)))
    b = TokenSeq(torch.zeros(1, 8, 4, dtype=torch.float64), Segments(0, (1, 4), (2, 2)))
    with pytest.raises(ShapeError):
        mfp_forward(mfp, a, b)


@pytest.mark.parametrize("seed", range(10))
def test_mfp_swap_symmetry(seed):
    mfp = symmetric_mfp(6, 3, seed)
    g = torch.Generator().manual_seed(seed)
    fv, ft = (torch.randn(1, 6, 3, 2, generator=g, dtype=torch.float64) for _ in range(2))
    a = mfp.parts(fv, ft)
    b = swapped_mfp(mfp).parts(ft, fv)
    assert torch.allclose(a["weights"], b["weights"].flip(1), rtol=0, atol=1e-14)
    assert torch.allclose(a["fused_low"], b["fused_low"], rtol=0, atol=1e-13)


def test_fovea_single_location_is_identity():
    z = torch.randn(2, 5, 1, 1, dtype=torch.float64)
    assert torch.equal(fovea(z), z)


def test_fovea_weights_sum_to_one():
    z = torch.randn(2, 5, 3, 4, dtype=torch.float64)
    mask = fovea(z) / z
    assert torch.allclose(mask.flatten(2).sum(-1), torch.ones(2, 5, dtype=torch.float64), atol=1e-12)


def test_fep_zero_up_gives_zero_prompt():
    fep = randomize(FEP(4, 2).double(), 0)
    with torch.no_grad():
        fep.up.weight.zero_()
        fep.up.bias.zero_()
    p = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    assert not fep(p, p).any()


def test_fep_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        FEP(4, 2)(torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 2, 3))


def test_uep_token_counts_full_width():
    uep = UEP(768, 8)
    seq = TokenSeq(torch.zeros(1, 320, 768), Segments(0, (8, 8), (16, 16)))
    with torch.no_grad():
        assert uep_forward(uep, seq).shape == (1, 320, 768)


def test_uep_skips_prompt_tokens():
    uep = randomize(UEP(4, 2).double(), 0)
    seq = TokenSeq(torch.randn(1, 2 + 4 + 4, 4, dtype=torch.float64), Segments(2, (2, 2), (2, 2)))
    changed = seq.data.clone()
    changed[:, :2] += 100.0
    with torch.no_grad():
        assert torch.equal(uep_forward(uep, seq), uep_forward(uep, seq.with_data(changed)))


def test_grid_mismatch_is_shape_error():
    uep = UEP(4, 2)
    with pytest.raises(ShapeError):
        TokenSeq(torch.zeros(1, 5, 4), Segments(0, (2, 2), (2, 2)))
    with pytest.raises(ShapeError):
        ip_forward(IP(4, 2), torch.zeros(1, 5, 4), torch.zeros(1, 5, 4), (2, 2))
    del uep


# ---------------------------------------------------------------------------
# bank initialization


def test_same_seed_identical_banks(toy_cfg):
    a, b = init_prompter_bank(toy_cfg, 7), init_prompter_bank(toy_cfg, 7)
    c = init_prompter_bank(toy_cfg, 8)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.state_dict().values(), c.state_dict().values()))


def test_fresh_bank_zero_up_projections_and_prompts(toy_cfg):
    bank = init_prompter_bank(toy_cfg, 0)
    ups = bank.up_projections()
    # 2 UEP + N IP + 1 MFP + M FEP
    assert len(ups) == 2 + toy_cfg.first_stage_blocks + 1 + toy_cfg.second_stage_blocks
    for _, m in ups:
        assert not m.weight.any() and not m.bias.any()
    for t in (bank.visible_prompt, bank.thermal_prompt, bank.fusion_prompt):
        assert t.shape == (2, 16) and not t.any()
    others = [p for n, p in bank.named_parameters() if n.endswith("weight") and ".up." not in n]
    assert others and all(p.abs().max() > 0 for p in others)


def test_fresh_prompters_are_no_ops(toy_cfg):
    bank = init_prompter_bank(toy_cfg, 0, torch.float64)
    seq = TokenSeq(torch.randn(1, 2 + 4 + 16, 16, dtype=torch.float64), Segments(2, (2, 2), (4, 4)))
    with torch.no_grad():
        assert not uep_forward(bank.uep_v["2"], seq).any()
        z = seq.template
        assert torch.equal(ip_forward(bank.ip[0], z, torch.randn_like(z), (2, 2)), z)
        assert not fep_forward(bank.fep[0], seq.image, seq.image, seq.segments).any()
        fused = mfp_forward(bank.mfp, seq, seq)
        assert torch.equal(fused.data, 0.5 * (seq.image + seq.image))


def test_bank_families_and_per_direction(toy_cfg):
    from midfusion.config import toy_tracker_config

    bank = PrompterBank(toy_cfg)
    assert set(bank.family_sizes()) == {"uep", "ip", "mfp", "fep", "prompts"}
    assert bank.ip_v2t(1) is bank.ip_to_visible(1)
    split = PrompterBank(toy_tracker_config(ip_per_direction=True))
    assert split.ip_v2t(1) is not split.ip_to_visible(1)
