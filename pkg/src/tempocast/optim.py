"""AdamW with decoupled weight decay, over registry parameters."""

import numpy as np


class AdamW:
    """Parameter groups are lists of (name, tensor); each group may carry
    its own learning rate (used for reduced-rate backbone fine-tuning)."""

    def __init__(self, groups, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if groups and isinstance(groups[0], tuple):
            groups = [{"params": groups}]
        self.groups = []
        for g in groups:
            self.groups.append({"params": list(g["params"]), "lr": float(g.get("lr", lr))})
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = {}
        self._v = {}
        for g in self.groups:
            for name, p in g["params"]:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for g in self.groups:
            for _, p in g["params"]:
                if p.grad is not None:
                    p.grad[...] = 0.0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for g in self.groups:
            lr = g["lr"]
            for name, p in g["params"]:
                grad = p.grad
                m = self._m[name]
                v = self._v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                if self.weight_decay:
                    p.data -= lr * self.weight_decay * p.data
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
