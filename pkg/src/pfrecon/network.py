"""Unrolled reconstruction networks for partial-Fourier repetition sets.

The main model alternates a stack of convolutional GRU cells with hard
data consistency, unrolled for a fixed number of iterations; GRU hidden
states persist across iterations. Repetitions are processed jointly:
halfway through the stack, features are pooled across the set (max or
mean) and added back to each repetition's features, which makes the
whole network permutation-equivariant in the repetition axis.

Two ablation regularizers replace the GRU stack with a residual CNN,
either shared across iterations or as a cascade of independent copies.

All pooling here is exactly order-independent: max is elementwise, and
mean sums in sorted order so the result is bit-identical under any
permutation of the set.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch
import torch.nn.functional as tfun
from torch import nn

from pfrecon.core import RepetitionSet, SamplingMask, as_pff

AGGREGATIONS = ("none", "mean", "max")
STRATEGIES = ("recurrent", "weight_shared", "cascaded")


def fft2c_t(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2-D FFT over the last two axes (torch)."""
    return torch.fft.fftshift(
        torch.fft.fft2(torch.fft.ifftshift(x, dim=(-2, -1)), norm="ortho"),
        dim=(-2, -1),
    )


def ifft2c_t(k: torch.Tensor) -> torch.Tensor:
    return torch.fft.fftshift(
        torch.fft.ifft2(torch.fft.ifftshift(k, dim=(-2, -1)), norm="ortho"),
        dim=(-2, -1),
    )


def data_consistency_t(
    z: torch.Tensor, y: torch.Tensor, mask: torch.Tensor, lam: float = 0.0
) -> torch.Tensor:
    """Replace (lam = 0) or blend (lam > 0) acquired k-space lines of z with y."""
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    kz = fft2c_t(z)
    if lam == 0:
        out = torch.where(mask, y, kz)
    else:
        out = torch.where(mask, (lam * kz + y) / (1.0 + lam), kz)
    return ifft2c_t(out)


def aggregate(feats: torch.Tensor, mode: str) -> torch.Tensor:
    """Pool features over the repetition axis and add back per repetition.

    feats: (B, C, H, W). The mean path sums in sorted order so the
    result does not depend on how the set happens to be ordered, down
    to the last bit.
    """
    if mode == "none":
        return feats
    if mode == "max":
        return feats + torch.amax(feats, dim=0, keepdim=True)
    if mode == "mean":
        pooled = torch.sort(feats, dim=0).values.sum(dim=0, keepdim=True)
        return feats + pooled / feats.shape[0]
    raise ValueError(f"unknown aggregation {mode!r}; expected one of {AGGREGATIONS}")


class ConvGRUCell(nn.Module):
    """GRU cell whose gate transforms are 3x3 convolutions.

    Gates see [hidden; input] channel concatenation; the candidate sees
    [reset * hidden; input]. New state is the usual convex combination,
    so with zero hidden init every output stays within tanh range.
    """

    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        both = in_channels + hidden_channels
        self.conv_z = nn.Conv2d(both, hidden_channels, 3, padding=1)
        self.conv_r = nn.Conv2d(both, hidden_channels, 3, padding=1)
        self.conv_h = nn.Conv2d(both, hidden_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        hx = torch.cat((h, x), dim=1)
        # z and r share the same input; one fused conv halves the GEMM count
        zr = tfun.conv2d(
            hx,
            torch.cat((self.conv_z.weight, self.conv_r.weight), dim=0),
            torch.cat((self.conv_z.bias, self.conv_r.bias), dim=0),
            padding=1,
        )
        z, r = torch.sigmoid(zr).chunk(2, dim=1)
        cand = torch.tanh(
            tfun.conv2d(
                torch.cat((r * h, x), dim=1),
                self.conv_h.weight,
                self.conv_h.bias,
                padding=1,
            )
        )
        return (1.0 - z) * h + z * cand


class RecurrentStack(nn.Module):
    """Stack of ConvGRU cells with mid-stack repetition pooling.

    The first depth-1 cells have `width` hidden channels; the last
    cell's hidden state has `out_channels` and is the output image.
    Pooling happens once, after cell depth//2, on the activation only;
    hidden states stay per-repetition.
    """

    def __init__(self, depth: int = 10, width: int = 32,
                 in_channels: int = 2, out_channels: int = 2):
        super().__init__()
        if depth < 2:
            raise ValueError("need at least two cells")
        hiddens = [width] * (depth - 1) + [out_channels]
        ins = [in_channels] + hiddens[:-1]
        self.cells = nn.ModuleList(
            ConvGRUCell(i, h) for i, h in zip(ins, hiddens)
        )
        self.agg_index = depth // 2
        self.hidden_channels = hiddens

    def zero_hidden(self, like: torch.Tensor) -> list[torch.Tensor]:
        b, _, h, w = like.shape
        return [like.new_zeros(b, c, h, w) for c in self.hidden_channels]

    def forward(self, x, hidden=None, aggregation: str = "max"):
        if x.shape[0] < 1:
            raise ValueError("repetition set must not be empty")
        if hidden is None:
            hidden = self.zero_hidden(x)
        new_hidden = []
        f = x
        for i, cell in enumerate(self.cells):
            h = cell(f, hidden[i])
            new_hidden.append(h)
            f = h
            if i + 1 == self.agg_index:
                f = aggregate(f, aggregation)
        return f, new_hidden


class ResidualBlock(nn.Module):
    """Two convolutions around a smooth ReLU-family activation.

    ELU instead of plain ReLU: identical on the positive side, but C1
    smooth at 0, which keeps finite-difference gradient verification
    meaningful (central differences across a ReLU kink do not converge).
    """

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(tfun.elu(self.conv1(x)))


class ResNetStack(nn.Module):
    """Residual CNN regularizer used by the ablation strategies.

    Plain head/tail convolutions around `depth` residual blocks, with
    the same mid-stack repetition pooling as the recurrent stack
    (after block depth//2). No hidden state.
    """

    def __init__(self, depth: int = 6, width: int = 64,
                 in_channels: int = 2, out_channels: int = 2):
        super().__init__()
        self.head = nn.Conv2d(in_channels, width, 3, padding=1)
        self.blocks = nn.ModuleList(ResidualBlock(width) for _ in range(depth))
        self.tail = nn.Conv2d(width, out_channels, 3, padding=1)
        self.agg_index = depth // 2

    def forward(self, x, aggregation: str = "max"):
        if x.shape[0] < 1:
            raise ValueError("repetition set must not be empty")
        f = self.head(x)
        for i, block in enumerate(self.blocks):
            f = block(f)
            if i + 1 == self.agg_index:
                f = aggregate(f, aggregation)
        return self.tail(f)


def init_he(module: nn.Module) -> nn.Module:
    """He-normal (fan-in, ReLU gain) init on all conv kernels, zero biases."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
    return module


class UnrolledNet(nn.Module):
    """Unrolled alternation of a learned regularizer and data consistency.

    strategy:
      recurrent     - one ConvGRU stack, hidden state carried across
                      iterations (the main model)
      weight_shared - one residual CNN reused at every iteration
      cascaded      - an independent residual CNN per iteration
    The residual-CNN strategies always pool with max; the recurrent one
    takes its pooling mode from `aggregation`.
    """

    def __init__(self, strategy: str = "recurrent", iters: int = 5,
                 aggregation: str = "max", depth: int | None = None,
                 width: int | None = None):
        super().__init__()
        if strategy not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"
            )
        if aggregation not in AGGREGATIONS:
            raise ValueError(
                f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}"
            )
        if iters < 1:
            raise ValueError("need at least one unrolled iteration")
        self.strategy = strategy
        self.iters = iters
        self.aggregation = aggregation
        if strategy == "recurrent":
            self.depth = 10 if depth is None else depth
            self.width = 32 if width is None else width
            self.stack = RecurrentStack(self.depth, self.width)
        else:
            self.depth = 6 if depth is None else depth
            self.width = 64 if width is None else width
            if strategy == "weight_shared":
                self.stack = ResNetStack(self.depth, self.width)
            else:
                self.stacks = nn.ModuleList(
                    ResNetStack(self.depth, self.width) for _ in range(iters)
                )
        init_he(self)

    def regularize(self, feats: torch.Tensor, hidden, step: int):
        """One regularizer pass; returns (features, hidden-or-None)."""
        if self.strategy == "recurrent":
            return self.stack(feats, hidden, self.aggregation)
        if self.strategy == "weight_shared":
            return self.stack(feats, "max"), None
        return self.stacks[step](feats, "max"), None

    def forward(self, y: torch.Tensor, mask: torch.Tensor,
                lam: float = 0.0) -> torch.Tensor:
        """Reconstruct a repetition set jointly.

        y: complex k-space (B, H, W) with zeros on non-acquired lines;
        mask: bool (W,). Returns complex images (B, H, W).
        """
        x = ifft2c_t(y)
        hidden = None
        for step in range(self.iters):
            feats = torch.stack((x.real, x.imag), dim=1)
            out, hidden = self.regularize(feats, hidden, step)
            z = torch.complex(out[:, 0], out[:, 1])
            x = data_consistency_t(z, y, mask, lam)
        return x


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def replicate_base(base: UnrolledNet, strategy: str, iters: int) -> UnrolledNet:
    """Expand a single-iteration net into a K-iteration variant.

    recurrent and weight_shared targets reuse the base weights as-is
    (one stack applied at every iteration); a cascaded target starts
    from an identical copy of the base per iteration. The base must be
    the matching family: recurrent for recurrent, weight_shared for the
    residual-CNN strategies.
    """
    if base.iters != 1:
        raise ValueError(f"base must have one iteration, got {base.iters}")
    wanted = "recurrent" if strategy == "recurrent" else "weight_shared"
    if base.strategy != wanted:
        raise ValueError(
            f"a {strategy!r} net must be seeded from a {wanted!r} base, "
            f"got {base.strategy!r}"
        )
    target = UnrolledNet(strategy, iters=iters, aggregation=base.aggregation,
                         depth=base.depth, width=base.width)
    if strategy == "cascaded":
        for stack in target.stacks:
            stack.load_state_dict(base.stack.state_dict())
    else:
        target.load_state_dict(base.state_dict())
    return target


def _to_torch(y_set: RepetitionSet, net: nn.Module):
    dtype = next(net.parameters()).dtype
    cdtype = torch.complex64 if dtype == torch.float32 else torch.complex128
    y = torch.from_numpy(np.ascontiguousarray(y_set.samples)).to(cdtype)
    mask = torch.from_numpy(y_set.mask.array())
    return y, mask


def drpf_forward(y_set: RepetitionSet, net: UnrolledNet,
                 lam: float = 0.0) -> np.ndarray:
    """Reconstruct a k-space repetition set; returns complex (B, H, W)."""
    y, mask = _to_torch(y_set, net)
    with torch.no_grad():
        out = net(y, mask, lam)
    return out.numpy()


def unrolled_variant_forward(y_set: RepetitionSet, net: UnrolledNet,
                             strategy: str) -> np.ndarray:
    """Like drpf_forward but asserts the checkpoint matches the strategy."""
    if net.strategy != strategy:
        raise ValueError(
            f"parameters are for strategy {net.strategy!r}, not {strategy!r}"
        )
    return drpf_forward(y_set, net)


CHECKPOINT_MAGIC = b"PFCKPT1\n"


def save_checkpoint(net: UnrolledNet, path, pff=None) -> None:
    """Write net parameters: JSON header + float32 little-endian payload."""
    state = net.state_dict()
    header = {
        "strategy": net.strategy,
        "iters": net.iters,
        "depth": net.depth,
        "width": net.width,
        "aggregation": net.aggregation,
        "pff": None if pff is None else str(as_pff(pff)),
        "tensors": [
            {"name": k, "shape": list(v.shape)} for k, v in state.items()
        ],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in state.values():
            fh.write(v.numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[UnrolledNet, dict]:
    """Rebuild an UnrolledNet from a checkpoint file; returns (net, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    net = UnrolledNet(
        strategy=header["strategy"],
        iters=header["iters"],
        aggregation=header["aggregation"],
        depth=header["depth"],
        width=header["width"],
    )
    state = {}
    offset = 0
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        end = offset + 4 * n
        if end > len(payload):
            raise ValueError(
                f"truncated checkpoint: tensor {spec['name']} needs bytes "
                f"[{offset}, {end}) but payload has {len(payload)}"
            )
        arr = np.frombuffer(payload[offset:end], dtype="<f4").reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
        offset = end
    if offset != len(payload):
        raise ValueError(
            f"checkpoint payload has {len(payload) - offset} trailing bytes"
        )
    net.load_state_dict(state)
    return net, header
