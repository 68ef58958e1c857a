"""Shared test helpers: seeded random banks and image pairs."""
import torch

from midfusion.pipeline import ModalFramePair
from midfusion.prompters import MFP, PrompterBank, init_prompter_bank


def randomize(module: torch.nn.Module, seed: int, scale: float = 0.3) -> torch.nn.Module:
    """Overwrite every parameter with seeded normal noise (up-projections included)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def random_bank(cfg, seed: int = 0, scale: float = 0.3) -> PrompterBank:
    return randomize(init_prompter_bank(cfg, seed, torch.float64), seed + 1000, scale)


def random_pair(shape, seed: int, dtype=torch.float64, batch: int = 1) -> ModalFramePair:
    g = torch.Generator().manual_seed(seed)
    return ModalFramePair(torch.rand(batch, *shape, 3, generator=g, dtype=dtype),
                          torch.rand(batch, *shape, 3, generator=g, dtype=dtype))


def smooth_head_loss(out, weights) -> torch.Tensor:
    """A differentiable scalar of the head maps (decoded boxes go through argmax)."""
    head = out.head
    r_score, r_offset, r_size = weights
    return (head.score_map * r_score).sum() + (head.offset * r_offset).sum() + (head.size * r_size).sum()


def finite_difference_errors(params, loss_fn, step: float = 1e-6, max_entries: int | None = None,
                             seed: int = 0) -> dict:
    """Relative error ``|g - g_fd| / max(|g|, |g_fd|)`` per named tensor (norms over entries).

    ``max_entries`` limits the checked entries per tensor to a seeded sample.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {n: p.grad.detach().clone() for n, p in params.items()}
    gen = torch.Generator().manual_seed(seed)
    errors = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            idx = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = torch.randperm(flat.numel(), generator=gen)[:max_entries]
            fd = torch.empty(len(idx), dtype=p.dtype)
            for k, i in enumerate(idx.tolist()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                fd[k] = (up - down) / (2 * step)
            g = analytic[name].view(-1)[idx]
            scale = max(g.norm().item(), fd.norm().item())
            errors[name] = (g - fd).norm().item() / scale if scale > 0 else 0.0
    return errors


def symmetric_mfp(dim: int, low: int, seed: int) -> MFP:
    """MFP whose weight_fc treats (v, t) symmetrically: output 1 reads the mirrored input blocks."""
    mfp = randomize(MFP(dim, low).double(), seed)
    with torch.no_grad():
        w = mfp.weight_fc.weight[0, :, 0, 0].reshape(5, low)
        mfp.weight_fc.weight[1, :, 0, 0] = w.flip(0).reshape(-1)
        mfp.weight_fc.bias[1] = mfp.weight_fc.bias[0]
    return mfp


def swapped_mfp(mfp: MFP) -> MFP:
    other = MFP(mfp.down_v.in_channels, mfp.down_v.out_channels).double()
    other.load_state_dict(mfp.state_dict())
    with torch.no_grad():
        other.down_v.load_state_dict(mfp.down_t.state_dict())
        other.down_t.load_state_dict(mfp.down_v.state_dict())
    return other
