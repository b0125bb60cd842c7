import torch


def numeric_grad(fn, tensor, h=1e-4, indices=None):
    """Central-difference gradient of scalar ``fn()`` w.r.t. entries of ``tensor`` (edited in place)."""
    flat = tensor.data.view(-1)
    idx = range(flat.numel()) if indices is None else indices
    out = torch.zeros(flat.numel(), dtype=torch.float64)
    for i in idx:
        orig = flat[i].item()
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out.view_as(tensor)


def analytic_grad(fn, tensor):
    tensor.grad = None
    (grad,) = torch.autograd.grad(fn(), tensor, allow_unused=True)
    return torch.zeros_like(tensor) if grad is None else grad


def relative_error(analytic, numeric, indices=None):
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    if indices is not None:
        a, n = a[list(indices)], n[list(indices)]
    scale = max(n.abs().max().item(), a.abs().max().item(), 1e-8)
    return (a - n).abs().max().item() / scale


def check(fn, tensor, h=1e-4, indices=None):
    """Max relative gradient error (inf-norm of difference over inf-norm of gradient)."""
    return relative_error(analytic_grad(fn, tensor), numeric_grad(fn, tensor, h, indices), indices)
