"""Compact convolutional autoencoder anomaly scorer.

Pure-numpy implementation with explicit backward passes so gradients can be
validated against finite differences. Encoder: two stride-2 3x3 convolution
stages (d -> 8 -> latent); decoder mirrors with nearest-neighbour upsampling.
Scores are per-pixel squared reconstruction errors averaged over overlapping
tiles.
"""

from dataclasses import dataclass, field

import numpy as np

from .detectors import InsufficientDataError, ScoreMap
from .features import FeatureStack


@dataclass(frozen=True)
class AeConfig:
    patch: int = 16
    epochs: int = 50
    latent_width: int = 4
    hidden_width: int = 8
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    n_tiles: int = 256
    seed: int = 0
    leak: float = 0.1
    # feature planes the AE sees; None means every plane in the stack.
    # The coherence plane is excluded by default so the AE scores the
    # radiometric/texture cue rather than replicating the CCD statistic.
    planes: tuple = ("log_I1", "log_I2", "log_ratio", "texture_mean",
                     "texture_var", "incidence")

    def __post_init__(self):
        if self.patch % 4 != 0:
            raise ValueError("patch must be a multiple of 4 (two stride-2 stages)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


class Conv2D:
    """3x3 convolution, padding 1, configurable stride."""

    def __init__(self, cin, cout, stride, rng):
        fan_in = cin * 9
        self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, 3, 3))
        self.bias = np.zeros(cout)
        self.stride = stride

    def forward(self, x):
        n, c, h, w = x.shape
        s = self.stride
        ho = (h + 2 - 3) // s + 1
        wo = (w + 2 - 3) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        win = win[:, :, ::s, ::s]                       # (n, c, ho, wo, 3, 3)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * 9)
        wmat = self.weight.reshape(self.weight.shape[0], c * 9)
        y = cols @ wmat.T + self.bias
        self._cols = cols
        self._shape_in = (n, c, h, w)
        self._out_hw = (ho, wo)
        return y.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)

    def backward(self, dy):
        n, c, h, w = self._shape_in
        s = self.stride
        ho, wo = self._out_hw
        cout = self.weight.shape[0]
        dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        self.dbias = dy_mat.sum(axis=0)
        self.dweight = (dy_mat.T @ self._cols).reshape(self.weight.shape)
        wmat = self.weight.reshape(cout, c * 9)
        dcols = (dy_mat @ wmat).reshape(n, ho, wo, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2))
        for ki in range(3):
            for kj in range(3):
                dxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += \
                    dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:-1, 1:-1]

    @property
    def params(self):
        return [self.weight, self.bias]

    @property
    def grads(self):
        return [self.dweight, self.dbias]


class LeakyReLU:
    def __init__(self, leak):
        self.leak = leak

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, self.leak * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.leak * dy)

    params = ()
    grads = ()


class UpsampleNN:
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        n, c, h, w = dy.shape
        return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

    params = ()
    grads = ()


def _build_layers(channels, cfg, rng):
    hid, lat, leak = cfg.hidden_width, cfg.latent_width, cfg.leak
    return [
        Conv2D(channels, hid, 2, rng), LeakyReLU(leak),
        Conv2D(hid, lat, 2, rng), LeakyReLU(leak),
        UpsampleNN(), Conv2D(lat, hid, 1, rng), LeakyReLU(leak),
        UpsampleNN(), Conv2D(hid, channels, 1, rng),
    ]


@dataclass
class AeModel:
    layers: list
    channels: int
    cfg: AeConfig
    norm_mean: np.ndarray = None    # per plane
    norm_std: np.ndarray = None

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def reconstruct(self, tiles):
        """Normalized tiles (N, d, P, P) -> reconstruction, no grad caching kept."""
        return self.forward(tiles)

    def loss_and_grads(self, tiles):
        """Mean squared reconstruction error and gradients per parameter."""
        recon = self.forward(tiles)
        diff = recon - tiles
        loss = np.mean(diff ** 2)
        dy = 2.0 * diff / diff.size
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        grads = [g for layer in self.layers for g in layer.grads]
        return loss, grads

    @property
    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def normalize(self, tiles):
        return (tiles - self.norm_mean[None, :, None, None]) / self.norm_std[None, :, None, None]


def stable_tile_positions(stable_mask, patch):
    """Top-left corners of patch x patch tiles lying fully inside stable_mask."""
    h, w = stable_mask.shape
    ok = np.asarray(stable_mask, dtype=float)
    csum = ok.cumsum(axis=0).cumsum(axis=1)
    padded = np.zeros((h + 1, w + 1))
    padded[1:, 1:] = csum
    ys = np.arange(h - patch + 1)
    xs = np.arange(w - patch + 1)
    counts = (padded[np.ix_(ys + patch, xs + patch)]
              - padded[np.ix_(ys, xs + patch)]
              - padded[np.ix_(ys + patch, xs)]
              + padded[np.ix_(ys, xs)])
    pos = np.argwhere(counts >= patch * patch - 0.5)
    return pos  # (n, 2) of (y, x)


def _extract_tiles(arr, positions, patch):
    tiles = np.stack([arr[y:y + patch, x:x + patch] for y, x in positions])
    return tiles.transpose(0, 3, 1, 2)  # (N, d, P, P)


def _stack_array(stack: FeatureStack, planes):
    if planes is None:
        return stack.as_array()
    missing = set(planes) - set(stack.planes)
    if missing:
        raise ValueError(f"stack has no planes {sorted(missing)}")
    return np.stack([stack.planes[name] for name in planes], axis=-1)


def train_ae(stack: FeatureStack, stable_mask, cfg: AeConfig = AeConfig()) -> AeModel:
    """Train on tiles sampled entirely inside stable_mask.

    Per-plane standardization is fitted on the training tiles; optimization
    is plain SGD with momentum on the mean squared reconstruction error.
    """
    arr = _stack_array(stack, cfg.planes)
    channels = arr.shape[-1]
    positions = stable_tile_positions(np.asarray(stable_mask, dtype=bool), cfg.patch)
    if positions.shape[0] < 100:
        raise InsufficientDataError(
            f"only {positions.shape[0]} fully-stable tiles available; need >= 100")

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    picks = positions[rng.integers(0, positions.shape[0], size=cfg.n_tiles)]
    tiles = _extract_tiles(arr, picks, cfg.patch)

    mean = tiles.mean(axis=(0, 2, 3))
    std = tiles.std(axis=(0, 2, 3))
    std = np.where(std > 1e-12, std, 1.0)

    model = AeModel(layers=_build_layers(channels, cfg, rng), channels=channels,
                    cfg=cfg, norm_mean=mean, norm_std=std)
    tiles = model.normalize(tiles)

    velocity = [np.zeros_like(p) for p in model.parameters]
    n = tiles.shape[0]
    model.epoch_losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = tiles[order[start:start + cfg.batch_size]]
            loss, grads = model.loss_and_grads(batch)
            losses.append(loss)
            for p, g, v in zip(model.parameters, grads, velocity):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
        model.epoch_losses.append(float(np.mean(losses)))
    return model


def ae_score_map(stack: FeatureStack, model: AeModel) -> ScoreMap:
    """Per-pixel squared reconstruction error, averaged over overlapping
    tiles placed with stride patch/2."""
    arr = _stack_array(stack, model.cfg.planes)
    h, w, d = arr.shape
    if d != model.channels:
        raise ValueError(f"stack has {d} planes but model expects {model.channels}")
    patch = model.cfg.patch
    stride = patch // 2

    def starts(extent):
        s = list(range(0, extent - patch + 1, stride))
        if s[-1] != extent - patch:
            s.append(extent - patch)
        return s

    positions = [(y, x) for y in starts(h) for x in starts(w)]
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    batch = 64
    for i in range(0, len(positions), batch):
        chunk = positions[i:i + batch]
        tiles = model.normalize(_extract_tiles(arr, chunk, patch))
        recon = model.reconstruct(tiles)
        err = np.mean((recon - tiles) ** 2, axis=1)  # (n, P, P)
        for (y, x), e in zip(chunk, err):
            acc[y:y + patch, x:x + patch] += e
            cnt[y:y + patch, x:x + patch] += 1.0
    return ScoreMap(detector="ae", scores=acc / cnt)


def save_model(model: AeModel, weights_path, manifest_path):
    """Flat float64 little-endian weights plus a plain-text shape manifest."""
    params = model.parameters
    flat = np.concatenate([p.ravel() for p in params]
                          + [model.norm_mean, model.norm_std])
    flat.astype("<f8").tofile(weights_path)
    with open(manifest_path, "w") as fh:
        fh.write("ccdbench-ae v1 float64 little-endian\n")
        fh.write(f"channels {model.channels}\n")
        fh.write(f"patch {model.cfg.patch}\n")
        fh.write(f"hidden {model.cfg.hidden_width}\n")
        fh.write(f"latent {model.cfg.latent_width}\n")
        if model.cfg.planes is None:
            fh.write("planes *\n")
        else:
            fh.write("planes " + " ".join(model.cfg.planes) + "\n")
        for p in params:
            fh.write("param " + " ".join(str(s) for s in p.shape) + "\n")
        fh.write(f"norm {model.channels}\n")


def load_model(weights_path, manifest_path) -> AeModel:
    with open(manifest_path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("ccdbench-ae v1"):
        raise ValueError("unrecognized model manifest")
    meta = {}
    shapes = []
    planes = AeConfig.planes
    for line in lines[1:]:
        key, *rest = line.split()
        if key == "param":
            shapes.append(tuple(int(v) for v in rest))
        elif key == "planes":
            planes = None if rest == ["*"] else tuple(rest)
        elif key != "norm":
            meta[key] = int(rest[0])
    cfg = AeConfig(patch=meta["patch"], hidden_width=meta["hidden"],
                   latent_width=meta["latent"], planes=planes)
    rng = np.random.Generator(np.random.Philox(key=0))
    model = AeModel(layers=_build_layers(meta["channels"], cfg, rng),
                    channels=meta["channels"], cfg=cfg)
    flat = np.fromfile(weights_path, dtype="<f8")
    offset = 0
    for p, shape in zip(model.parameters, shapes):
        size = int(np.prod(shape))
        p[...] = flat[offset:offset + size].reshape(shape)
        offset += size
    d = meta["channels"]
    model.norm_mean = flat[offset:offset + d]
    model.norm_std = flat[offset + d:offset + 2 * d]
    return model
