"""Fixed-topology U-Net: 4-level encoder/decoder with skip concatenation.

Layer census for the default depth of 4: 19 convolutions (8 encoder,
2 bridge, 8 decoder, 1 final 1x1), 18 batch norms and 18 ReLUs (one pair
after every convolution except the final), 4 max-pools, 4 transposed
convolutions, 4 skip concatenations.  Channel counts double per level from
``base_channels``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import BatchNorm2D, Conv2D, MaxPool2x2, ReLU, TConv2x2


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int
    out_channels: int
    base_channels: int = 16
    depth: int = 4
    kernel: tuple = (5, 5)

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.base_channels,
               self.depth) < 1:
            raise ValueError("spec sizes must be positive")
        if self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0:
            raise ValueError("kernel sides must be odd")

    def level_channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)


class _ConvBlock:
    """conv -> BN -> ReLU, twice."""

    def __init__(self, in_ch, mid_ch, out_ch, kernel, rng, dtype):
        self.conv1 = Conv2D(in_ch, mid_ch, kernel, rng, dtype)
        self.bn1 = BatchNorm2D(mid_ch, dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2D(mid_ch, out_ch, kernel, rng, dtype)
        self.bn2 = BatchNorm2D(out_ch, dtype)
        self.relu2 = ReLU()

    def layers(self):
        return [("conv1", self.conv1), ("bn1", self.bn1), ("relu1", self.relu1),
                ("conv2", self.conv2), ("bn2", self.bn2), ("relu2", self.relu2)]

    def forward(self, x, train):
        for _, layer in self.layers():
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.layers()):
            dy = layer.backward(dy)
        return dy


class UNet:
    """Encoder/decoder network operating on [N, H, W, C] tensors.

    Spatial dimensions must be divisible by 2**depth; violations raise at
    forward time.  Inference mode is a pure function of the weights.
    """

    def __init__(self, spec: UNetSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = dtype
        self.step_count = 0
        rng = np.random.default_rng(seed)
        k = spec.kernel
        d = spec.depth

        self.enc = []
        in_ch = spec.in_channels
        for lvl in range(1, d + 1):
            ch = spec.level_channels(lvl)
            self.enc.append(_ConvBlock(in_ch, ch, ch, k, rng, dtype))
            in_ch = ch
        self.pools = [MaxPool2x2() for _ in range(d)]
        bridge_ch = spec.level_channels(d + 1)
        self.bridge = _ConvBlock(in_ch, bridge_ch, bridge_ch, k, rng, dtype)

        self.tconvs = []
        self.dec = []
        up_in = bridge_ch
        for lvl in range(d, 0, -1):
            ch = spec.level_channels(lvl)
            self.tconvs.append(TConv2x2(up_in, ch, rng, dtype))
            self.dec.append(_ConvBlock(2 * ch, ch, ch, k, rng, dtype))
            up_in = ch
        self.final = Conv2D(up_in, spec.out_channels, (1, 1), rng, dtype)
        self._skip_grads = None

    # -- structure ---------------------------------------------------------

    def named_layers(self):
        for i, blk in enumerate(self.enc, 1):
            for name, layer in blk.layers():
                yield f"enc{i}.{name}", layer
        for i, pool in enumerate(self.pools, 1):
            yield f"pool{i}", pool
        for name, layer in self.bridge.layers():
            yield f"bridge.{name}", layer
        for i, (tc, blk) in enumerate(zip(self.tconvs, self.dec)):
            lvl = self.spec.depth - i
            yield f"dec{lvl}.up", tc
            for name, layer in blk.layers():
                yield f"dec{lvl}.{name}", layer
        yield "final", self.final

    def census(self) -> dict:
        counts = {"conv": 0, "batchnorm": 0, "relu": 0, "maxpool": 0,
                  "tconv": 0, "concat": self.spec.depth}
        kinds = {Conv2D: "conv", BatchNorm2D: "batchnorm", ReLU: "relu",
                 MaxPool2x2: "maxpool", TConv2x2: "tconv"}
        for _, layer in self.named_layers():
            counts[kinds[type(layer)]] += 1
        return counts

    def params(self) -> dict:
        out = {}
        for name, layer in self.named_layers():
            for pname, arr in layer.params.items():
                out[f"{name}.{pname}"] = arr
        return out

    def grads(self) -> dict:
        out = {}
        for name, layer in self.named_layers():
            for pname in layer.params:
                out[f"{name}.{pname}"] = layer.grads[pname]
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(a.shape)) for a in self.params().values())

    # -- persistence -------------------------------------------------------

    def state_dict(self) -> dict:
        state = dict(self.params())
        for name, layer in self.named_layers():
            if isinstance(layer, BatchNorm2D):
                state[f"{name}.running_mean"] = layer.running_mean
                state[f"{name}.running_var"] = layer.running_var
        state["step_count"] = np.array([self.step_count], dtype=np.float64)
        return state

    def load_state_dict(self, state: dict):
        for name, layer in self.named_layers():
            for pname in layer.params:
                key = f"{name}.{pname}"
                arr = np.asarray(state[key], dtype=self.dtype)
                if arr.shape != layer.params[pname].shape:
                    raise ValueError(f"shape mismatch for {key}")
                layer.params[pname] = arr
            if isinstance(layer, BatchNorm2D):
                layer.running_mean = np.asarray(state[f"{name}.running_mean"],
                                                dtype=self.dtype)
                layer.running_var = np.asarray(state[f"{name}.running_var"],
                                               dtype=self.dtype)
        if "step_count" in state:
            self.step_count = int(np.asarray(state["step_count"]).ravel()[0])

    # -- compute -----------------------------------------------------------

    def forward(self, x, train: bool = True):
        x = np.asarray(x, dtype=self.dtype)
        div = 2 ** self.spec.depth
        if x.ndim != 4 or x.shape[1] % div or x.shape[2] % div:
            raise ValueError(
                f"input must be [N, H, W, C] with H, W divisible by {div}, "
                f"got {x.shape}")
        if x.shape[3] != self.spec.in_channels:
            raise ValueError(
                f"expected {self.spec.in_channels} input channels, got {x.shape[3]}")

        skips = []
        for blk, pool in zip(self.enc, self.pools):
            x = blk.forward(x, train)
            skips.append(x)
            x = pool.forward(x, train)
        x = self.bridge.forward(x, train)
        for tc, blk, skip in zip(self.tconvs, self.dec, reversed(skips)):
            x = tc.forward(x, train)
            x = np.concatenate([skip, x], axis=-1)
            x = blk.forward(x, train)
        return self.final.forward(x, train)

    def backward(self, dy):
        """Backpropagate; returns the input gradient, fills layer grads."""
        dy = self.final.backward(np.asarray(dy, dtype=self.dtype))
        skip_grads = []      # filled shallow-to-deep as decoders unwind
        for tc, blk in zip(self.tconvs[::-1], self.dec[::-1]):
            dcat = blk.backward(dy)
            ch = dcat.shape[-1] // 2
            skip_grads.append(dcat[..., :ch])
            dy = tc.backward(np.ascontiguousarray(dcat[..., ch:]))
        dy = self.bridge.backward(dy)
        for pool, blk, dskip in zip(self.pools[::-1], self.enc[::-1],
                                    skip_grads[::-1]):
            dy = pool.backward(dy)
            dy = blk.backward(dy + dskip)
        return dy
