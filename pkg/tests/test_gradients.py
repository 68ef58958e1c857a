import pytest
import torch

from midfusion.pipeline import track
from midfusion.prompters import FEP, IP, MFP, UEP

from helpers import finite_difference_errors, random_bank, random_pair, randomize, smooth_head_loss


def _module_case(name):
    g = torch.Generator().manual_seed(0)
    x = torch.randn(1, 6, 3, 3, generator=g, dtype=torch.float64)
    y = torch.randn(1, 6, 3, 3, generator=g, dtype=torch.float64)
    r = torch.randn(1, 6, 3, 3, generator=g, dtype=torch.float64)
    if name == "uep":
        m = randomize(UEP(6, 3).double(), 1)
        return m, lambda: (m(x) * r).sum()
    if name == "ip":
        m = randomize(IP(6, 3).double(), 2)
        return m, lambda: (m(x, y) * r).sum()
    if name == "mfp":
        m = randomize(MFP(6, 3).double(), 3)
        return m, lambda: (m(x, y) * r).sum()
    m = randomize(FEP(6, 3).double(), 4)
    return m, lambda: (m(x, y) * r).sum()


@pytest.mark.parametrize("name", ["uep", "ip", "mfp", "fep"])
def test_prompter_gradients_match_finite_differences(name):
    module, loss_fn = _module_case(name)
    errors = finite_difference_errors(dict(module.named_parameters()), loss_fn)
    assert errors and max(errors.values()) < 1e-5, errors


def test_end_to_end_gradients_sampled(toy_cfg, foundation64):
    bank = random_bank(toy_cfg, 0, scale=0.2)
    templates, searches = random_pair((32, 32), 1), random_pair((64, 64), 2)
    g = torch.Generator().manual_seed(3)
    weights = (torch.randn(1, 4, 4, generator=g, dtype=torch.float64),
               torch.randn(1, 2, 4, 4, generator=g, dtype=torch.float64),
               torch.randn(1, 2, 4, 4, generator=g, dtype=torch.float64))

    def loss_fn():
        return smooth_head_loss(track(bank, foundation64, templates, searches), weights)

    errors = finite_difference_errors(dict(bank.named_parameters()), loss_fn, max_entries=4)
    assert len(errors) == len(list(bank.parameters()))
    assert max(errors.values()) < 1e-5, {k: v for k, v in errors.items() if v >= 1e-5}


def test_foundation_receives_no_gradient(toy_cfg, foundation64):
    bank = random_bank(toy_cfg, 0)
    out = track(bank, foundation64, random_pair((32, 32), 1), random_pair((64, 64), 2))
    out.score_map.sum().backward()
    assert all(p.grad is None for p in foundation64.parameters())
    assert all(p.grad is not None for p in bank.parameters())
