"""Adam with one state per parameter group."""

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_update(param, grad, m, v, t, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """One bias-corrected Adam update, in place on ``param``, ``m`` and ``v``.

    ``t`` is the 1-based step count after this update.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype, copy=False)
    return param


class Adam:
    """``groups`` maps a group name to ``(named_params, lr)``; weight decay is 0."""

    def __init__(self, groups, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.groups = {name: (list(params), lr) for name, (params, lr) in groups.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.steps = {name: 0 for name in self.groups}
        for params, _ in self.groups.values():
            for pname, p in params:
                self.m[pname] = np.zeros(p.shape, dtype=np.float64)
                self.v[pname] = np.zeros(p.shape, dtype=np.float64)

    def zero_grad(self, groups=None):
        for name in groups or self.groups:
            for _, p in self.groups[name][0]:
                p.grad = None

    def step(self, groups=None):
        """Update the named groups (all by default). A non-finite gradient
        aborts the step before any parameter changes."""
        active = list(groups or self.groups)
        for name in active:
            for pname, p in self.groups[name][0]:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise FloatingPointError(f"non-finite gradient in {pname} (group {name}); step aborted")
        for name in active:
            params, lr = self.groups[name]
            self.steps[name] += 1
            t = self.steps[name]
            for pname, p in params:
                g = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
                adam_update(p.data, g, self.m[pname], self.v[pname], t, lr, self.beta1, self.beta2, self.eps)

    def state_dict(self):
        out = {}
        for k, a in self.m.items():
            out[f"adam.m.{k}"] = a
        for k, a in self.v.items():
            out[f"adam.v.{k}"] = a
        for name, t in self.steps.items():
            out[f"adam.step.{name}"] = np.array(t, dtype=np.int64)
        return out

    def load_state_dict(self, state):
        for k in self.m:
            self.m[k][...] = state[f"adam.m.{k}"]
            self.v[k][...] = state[f"adam.v.{k}"]
        for name in self.steps:
            self.steps[name] = int(state[f"adam.step.{name}"])
