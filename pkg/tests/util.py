import torch


def finite_difference_check(fn, inputs, n_coords=50, eps=1e-6, rtol=1e-3, atol=1e-8, seed=0):
    """Compare autograd against central differences at random input coordinates.

    ``fn`` maps float64 tensors to a scalar. Coordinates are drawn uniformly
    over all inputs' elements.
    """
    inputs = [x.detach().clone().double().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]

    sizes = [x.numel() for x in inputs]
    g = torch.Generator().manual_seed(seed)
    picks = torch.randint(0, sum(sizes), (n_coords,), generator=g).tolist()
    worst = 0.0
    for flat in picks:
        which = 0
        while flat >= sizes[which]:
            flat -= sizes[which]
            which += 1
        with torch.no_grad():
            x = inputs[which].view(-1)
            orig = x[flat].item()
            x[flat] = orig + eps
            up = fn(*inputs).item()
            x[flat] = orig - eps
            down = fn(*inputs).item()
            x[flat] = orig
        numeric = (up - down) / (2 * eps)
        analytic = grads[which].reshape(-1)[flat].item()
        err = abs(numeric - analytic)
        scale = max(abs(numeric), abs(analytic))
        assert err <= atol or err <= rtol * scale, (
            f"input {which} coord {flat}: autograd {analytic:.8g} vs finite difference {numeric:.8g}"
        )
        worst = max(worst, err / scale if scale > 0 else 0.0)
    return worst
