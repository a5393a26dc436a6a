"""The full network: preprocessing trunk, encoder-decoder, and head.

The default configuration reproduces the reference 23-row layer table:
a stride-2 7x7 stem and three ResBlock stages take 512x512 down to 128x128
at width 128, the encoder-decoder applies `scales` pool/upsample stages
around a width-256 bottleneck, and a 1x1 ConvBlock plus linear 1x1 conv
emit the single-channel 128x128 heatmap. Ablation switches (extra
encoder-decoder skip paths, deep-supervision heads, scale count, filter
widths, bottleneck ratio) and an integer width divisor for desk-scale
variants are all part of ModelConfig.

Weights files are little-endian binary: magic, version, a canonical-JSON
meta block (config + dtype), a manifest of (name, shape, dtype, offset),
the raw parameter payload, and a trailing 64-bit checksum.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from tclnet.errors import ConfigError, CorruptWeightsError, ShapeError
from tclnet.layers import (Conv2d, ConvBlock, ResBlock, maxpool2x2,
                           upsample_nearest2x)
from tclnet.tensor import SINGLE, Tensor

# preprocess widths, in table order: Conv-S2, ConvBlock, ResBlock, ResBlock
# (after the pool), Conv, ResBlock, ResBlock
_STEM_WIDTHS = (16, 32, 32, 32, 64, 64, 128)


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 512
    scales: int = 3
    encoder_filters: tuple = (256, 256, 256)
    decoder_filters: tuple = (128, 64, 64)
    use_encoder_decoder_skips: bool = False
    deep_supervision: bool = False
    bottleneck_ratio: int = 2
    width_divisor: int = 1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "encoder_filters", tuple(self.encoder_filters))
        object.__setattr__(self, "decoder_filters", tuple(self.decoder_filters))
        if not 1 <= self.scales <= 5:
            raise ConfigError(f"scales must be in [1,5], got {self.scales}")
        if len(self.encoder_filters) != self.scales:
            raise ConfigError(f"encoder_filters has {len(self.encoder_filters)} "
                              f"entries for scales={self.scales}")
        if len(self.decoder_filters) != self.scales:
            raise ConfigError(f"decoder_filters has {len(self.decoder_filters)} "
                              f"entries for scales={self.scales}")
        if self.width_divisor < 1:
            raise ConfigError(f"width_divisor must be >= 1, got {self.width_divisor}")
        if self.bottleneck_ratio < 1:
            raise ConfigError(f"bottleneck_ratio must be >= 1, got {self.bottleneck_ratio}")
        unit = 4 * 2 ** self.scales
        if self.input_size < unit or self.input_size % unit:
            raise ConfigError(f"input_size must be a positive multiple of "
                              f"{unit} for scales={self.scales}, got {self.input_size}")
        for name, widths in (("encoder_filters", self.encoder_filters),
                             ("decoder_filters", self.decoder_filters),
                             ("stem widths", _STEM_WIDTHS)):
            for wd in widths:
                if int(wd) < 1:
                    raise ConfigError(f"{name} entry {wd} is not positive")
        # every ResBlock output width must survive the divisor and the
        # bottleneck split
        res_widths = (_STEM_WIDTHS[2], _STEM_WIDTHS[3], _STEM_WIDTHS[5],
                      _STEM_WIDTHS[6]) + self.encoder_filters + self.decoder_filters
        for wd in res_widths:
            scaled = wd // self.width_divisor
            if scaled < 1 or wd % self.width_divisor:
                raise ConfigError(f"width_divisor {self.width_divisor} does not "
                                  f"divide width {wd}")
            if scaled % self.bottleneck_ratio:
                raise ConfigError(f"scaled width {scaled} not divisible by "
                                  f"bottleneck_ratio {self.bottleneck_ratio}")

    @property
    def map_size(self) -> int:
        return self.input_size // 4

    def scaled(self, width: int) -> int:
        return width // self.width_divisor

    def stem_widths(self) -> tuple:
        return tuple(self.scaled(w) for w in _STEM_WIDTHS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_filters"] = list(self.encoder_filters)
        d["decoder_filters"] = list(self.decoder_filters)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        try:
            return ModelConfig(**d)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None


class TclNet:
    """The assembled network; construction is deterministic given the seed."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=SINGLE):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        kw = dict(rng=rng, dtype=self.dtype)
        bkw = dict(momentum=config.bn_momentum, eps=config.bn_eps, **kw)
        rkw = dict(bottleneck_ratio=config.bottleneck_ratio, **bkw)
        s = config.stem_widths()
        enc = tuple(config.scaled(f) for f in config.encoder_filters)
        dec = tuple(config.scaled(f) for f in config.decoder_filters)

        self.stem_conv = Conv2d(1, s[0], 7, stride=2, **kw)
        self.stem_block = ConvBlock(s[0], s[1], 1, **bkw)
        self.stem_res1 = ResBlock(s[1], s[2], **rkw)
        self.stem_res2 = ResBlock(s[2], s[3], **rkw)
        self.stem_conv2 = Conv2d(s[3], s[4], 1, **kw)
        self.stem_res3 = ResBlock(s[4], s[5], **rkw)
        self.stem_res4 = ResBlock(s[5], s[6], **rkw)

        prev = s[6]
        self.enc_blocks = []
        enc_src_channels = []  # channels of the feature saved before each pool
        for f in enc:
            enc_src_channels.append(prev)
            self.enc_blocks.append(ResBlock(prev, f, **rkw))
            prev = f
        self.mid_res = ResBlock(prev, prev, **rkw)

        self.dec_blocks = []
        dec_in_channels = []  # channels arriving at each decoder stage
        for f in dec:
            dec_in_channels.append(prev)
            self.dec_blocks.append(ResBlock(prev, f, **rkw))
            prev = f
        self.head_block = ConvBlock(prev, dec[-1], 1, **bkw)
        self.head_conv = Conv2d(dec[-1], 1, 1, **kw)

        self.skip_projs = []
        if config.use_encoder_decoder_skips:
            for i in range(config.scales):
                src_ch = enc_src_channels[config.scales - 1 - i]
                self.skip_projs.append(Conv2d(src_ch, dec_in_channels[i], 1, **kw))
        self.aux_heads = []
        if config.deep_supervision:
            for i in range(config.scales - 1):
                self.aux_heads.append(Conv2d(dec[i], 1, 1, **kw))

        self._rows = self._build_rows(s, enc, dec)

    # -- structure -----------------------------------------------------------

    def _build_rows(self, s, enc, dec):
        rows = [
            f"Conv-S2 {s[0]} 7×7",
            f"ConvBlock {s[1]} 1×1",
            f"ResBlock {s[2]} 3×3",
            f"Maxpooling {s[2]} -",
            f"ResBlock {s[3]} 3×3",
            f"Conv {s[4]} 1×1",
            f"ResBlock {s[5]} 3×3",
            f"ResBlock {s[6]} 3×3",
        ]
        prev = s[6]
        for f in enc:
            rows.append(f"Maxpooling {prev} -")
            rows.append(f"ResBlock {f} 3×3")
            prev = f
        rows.append(f"ResBlock {prev} 3×3")
        for f in dec:
            rows.append(f"Upsample {prev} -")
            rows.append(f"ResBlock {f} 3×3")
            prev = f
        rows.append(f"ConvBlock {dec[-1]} 1×1")
        rows.append("Conv 1 1×1")
        return rows

    def layer_table(self):
        """Row strings 'name channels kernel' in execution order."""
        return list(self._rows)

    def _components(self):
        named = [
            ("stem1_conv", self.stem_conv),
            ("stem2_block", self.stem_block),
            ("stem3_res", self.stem_res1),
            ("stem4_res", self.stem_res2),
            ("stem5_conv", self.stem_conv2),
            ("stem6_res", self.stem_res3),
            ("stem7_res", self.stem_res4),
        ]
        named += [(f"enc{i}_res", b) for i, b in enumerate(self.enc_blocks)]
        named.append(("mid_res", self.mid_res))
        named += [(f"dec{i}_res", b) for i, b in enumerate(self.dec_blocks)]
        named += [("head_block", self.head_block), ("head_conv", self.head_conv)]
        named += [(f"skipproj{i}", p) for i, p in enumerate(self.skip_projs)]
        named += [(f"aux{i}_conv", h) for i, h in enumerate(self.aux_heads)]
        return named

    def parameters(self):
        out = []
        for prefix, comp in self._components():
            out += [(f"{prefix}.{n}", t) for n, t in comp.parameters()]
        return out

    def buffers(self):
        out = []
        for prefix, comp in self._components():
            out += [(f"{prefix}.{n}", a) for n, a in comp.buffers()]
        return out

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()

    # -- execution -------------------------------------------------------------

    def forward(self, x: Tensor, mode="train", with_aux=False):
        size = self.config.input_size
        if not isinstance(x, Tensor) or x.data.ndim != 4 or \
                x.data.shape[1:] != (1, size, size):
            got = x.data.shape if isinstance(x, Tensor) else type(x).__name__
            raise ShapeError(f"forward expects (B,1,{size},{size}), got {got}")
        h = self.stem_conv.forward(x)
        h = self.stem_block.forward(h, mode)
        h = self.stem_res1.forward(h, mode)
        h = maxpool2x2(h)
        h = self.stem_res2.forward(h, mode)
        h = self.stem_conv2.forward(h)
        h = self.stem_res3.forward(h, mode)
        h = self.stem_res4.forward(h, mode)

        srcs = []
        for block in self.enc_blocks:
            srcs.append(h)
            h = maxpool2x2(h)
            h = block.forward(h, mode)
        h = self.mid_res.forward(h, mode)

        aux = []
        scales = self.config.scales
        for i, block in enumerate(self.dec_blocks):
            h = upsample_nearest2x(h)
            if self.skip_projs:
                h = h + self.skip_projs[i].forward(srcs[scales - 1 - i])
            h = block.forward(h, mode)
            if self.aux_heads and i < len(self.aux_heads):
                aux.append(self.aux_heads[i].forward(h))

        h = self.head_block.forward(h, mode)
        h = self.head_conv.forward(h)
        if with_aux:
            return h, aux
        return h

    __call__ = forward


def build(config: ModelConfig, seed: int = 0, dtype=SINGLE) -> TclNet:
    return TclNet(config, seed=seed, dtype=dtype)


def parameter_count(net: TclNet) -> int:
    return sum(t.data.size for _, t in net.parameters())


# -- checksummed binary blob format ----------------------------------------------

_MAGIC = b"TCLW"
_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_blob(path, meta: dict, arrays) -> None:
    """Write named arrays with a meta dict, manifest, and trailing checksum."""
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        manifest.append([name, list(arr.shape), arr.dtype.newbyteorder("<").str])
        manifest[-1].append(offset)
        offset += len(raw)
        chunks.append(raw)
    meta_b = _canonical_json(meta)
    manifest_b = _canonical_json(manifest)
    payload = b"".join(chunks)
    body = b"".join([
        _MAGIC,
        struct.pack("<I", _VERSION),
        struct.pack("<I", len(meta_b)), meta_b,
        struct.pack("<I", len(manifest_b)), manifest_b,
        struct.pack("<Q", len(payload)), payload,
    ])
    digest = hashlib.blake2b(body, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def read_blob(path):
    """Read a blob back as (meta, ordered dict name -> array); any structural
    or checksum problem raises CorruptWeightsError."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 + 8:
        raise CorruptWeightsError(f"{path}: file too short")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CorruptWeightsError(f"{path}: checksum mismatch")
    if body[:4] != _MAGIC:
        raise CorruptWeightsError(f"{path}: bad magic {body[:4]!r}")
    pos = 4
    (version,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if version != _VERSION:
        raise CorruptWeightsError(f"{path}: unsupported format version {version}")
    try:
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + n].decode("utf-8"))
        pos += n
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        manifest = json.loads(body[pos:pos + n].decode("utf-8"))
        pos += n
        (payload_len,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        payload = body[pos:pos + payload_len]
        if len(payload) != payload_len:
            raise CorruptWeightsError(f"{path}: truncated payload")
        arrays = {}
        for name, shape, dtype_str, offset in manifest:
            dt = np.dtype(dtype_str)
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype=dt, count=count,
                                offset=offset).reshape(shape).copy()
            arrays[name] = arr
        return meta, arrays
    except CorruptWeightsError:
        raise
    except Exception as exc:
        raise CorruptWeightsError(f"{path}: malformed header ({exc})") from None


def save_weights(net: TclNet, path) -> None:
    meta = {
        "kind": "tclnet-weights",
        "model": net.config.to_dict(),
        "dtype": net.dtype.str,
    }
    arrays = [(n, t.data) for n, t in net.parameters()] + list(net.buffers())
    write_blob(path, meta, arrays)


def load_weights(path, expected_config: ModelConfig = None) -> TclNet:
    meta, arrays = read_blob(path)
    if meta.get("kind") != "tclnet-weights":
        raise CorruptWeightsError(f"{path}: not a weights file "
                                  f"(kind={meta.get('kind')!r})")
    config = ModelConfig.from_dict(meta["model"])
    if expected_config is not None and config != expected_config:
        raise ConfigError(f"weights config {config} does not match requested "
                          f"{expected_config}")
    net = TclNet(config, seed=0, dtype=np.dtype(meta["dtype"]))
    apply_arrays(net, arrays, path)
    return net


def apply_arrays(net: TclNet, arrays: dict, origin="<blob>") -> None:
    """Overwrite a built net's parameters and running stats from a blob dict."""
    for name, t in net.parameters():
        if name not in arrays:
            raise CorruptWeightsError(f"{origin}: missing parameter {name}")
        arr = arrays[name]
        if tuple(arr.shape) != t.data.shape:
            raise CorruptWeightsError(f"{origin}: parameter {name} shape "
                                      f"{arr.shape} != {t.data.shape}")
        t.data = np.ascontiguousarray(arr, dtype=t.data.dtype)
    for name, buf in net.buffers():
        if name not in arrays:
            raise CorruptWeightsError(f"{origin}: missing buffer {name}")
        arr = arrays[name]
        if tuple(arr.shape) != buf.shape:
            raise CorruptWeightsError(f"{origin}: buffer {name} shape "
                                      f"{arr.shape} != {buf.shape}")
        buf[...] = arr.astype(buf.dtype, copy=False)
