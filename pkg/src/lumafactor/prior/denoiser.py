"""Small convolutional v-prediction network and its checkpoint format."""
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

COND_CHANNELS = 3
LATENT_CHANNELS = 6
TIME_FREQS = 4
MAGIC = b"SMAT"
FORMAT_VERSION = 1


def time_features(t, n_freqs=TIME_FREQS):
    """Sinusoidal embedding of t in [0, 1]: (B,) -> (B, 2 * n_freqs)."""
    freqs = 0.5 * torch.pi * (2.0 ** torch.arange(n_freqs, dtype=torch.float32))
    ang = t[:, None].float() * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class Denoiser(nn.Module):
    def __init__(self, width=32, n_layers=4, n_freqs=TIME_FREQS):
        super().__init__()
        c_in = COND_CHANNELS + LATENT_CHANNELS + 2 * n_freqs
        chans = [c_in] + [width] * (n_layers - 1) + [LATENT_CHANNELS]
        self.convs = nn.ModuleList(nn.Conv2d(a, b, 3, padding=1) for a, b in zip(chans[:-1], chans[1:]))
        # untrained model predicts v = 0
        nn.init.zeros_(self.convs[-1].weight)
        nn.init.zeros_(self.convs[-1].bias)
        self.width = width
        self.n_freqs = n_freqs

    def forward(self, cond, z_t, t):
        b, _, h, w = z_t.shape
        tf = time_features(t, self.n_freqs).view(b, -1, 1, 1).expand(-1, -1, h, w)
        x = torch.cat([cond, z_t, tf], dim=1)
        for conv in self.convs[:-1]:
            x = nn.functional.silu(conv(x))
        return self.convs[-1](x)

    def n_parameters(self):
        return sum(p.numel() for p in self.parameters())


def _to_nchw(a):
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def _to_nhwc(t, squeeze):
    a = t.detach().numpy().transpose(0, 2, 3, 1).astype(np.float64)
    return a[0] if squeeze else a


class DenoiserParams:
    """Trained weights plus a numpy inference interface (channel-last arrays)."""

    def __init__(self, model: Denoiser = None):
        self.model = model if model is not None else Denoiser()
        self.model.eval()

    def predict_v(self, z_t, t, cond):
        """Raw network output for ``z_t`` (h, w, 6) or (B, h, w, 6)."""
        squeeze = np.ndim(z_t) == 3
        zt = _to_nchw(z_t)
        c = _to_nchw(cond)
        if c.shape[0] != zt.shape[0]:
            c = c.expand(zt.shape[0], -1, -1, -1)
        tt = torch.full((zt.shape[0],), float(t), dtype=torch.float32)
        with torch.no_grad():
            out = self.model(c, zt, tt)
        return _to_nhwc(out, squeeze)

    def n_parameters(self):
        return self.model.n_parameters()

    # -------------------------------------------------------- checkpoints

    def save(self, path):
        """Binary checkpoint: magic, version, tensor count, then per tensor
        (name, shape, little-endian float32 values)."""
        state = self.model.state_dict()
        out = bytearray(MAGIC)
        out += struct.pack("<III", FORMAT_VERSION, self.model.width, len(state))
        for name, tensor in state.items():
            arr = tensor.detach().numpy().astype("<f4")
            nb = name.encode("utf-8")
            out += struct.pack("<I", len(nb)) + nb
            out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError(f"{path}: byte offset 0: not a prior checkpoint (bad magic)")
        version, width, count = struct.unpack_from("<III", raw, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: byte offset 4: unsupported checkpoint version {version}")
        pos = 16
        state = {}
        try:
            if count == 0 or count % 2:
                raise ValueError(f"bad tensor count {count}")
            for _ in range(count):
                (n,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                name = raw[pos:pos + n].decode("utf-8")
                pos += n
                (ndim,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                shape = struct.unpack_from(f"<{ndim}I", raw, pos)
                pos += 4 * ndim
                size = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
                pos += 4 * size
                state[name] = torch.from_numpy(arr.astype(np.float32))
        except (struct.error, ValueError) as exc:
            raise ValueError(f"{path}: byte offset {pos}: truncated checkpoint ({exc})") from None
        c_in = state["convs.0.weight"].shape[1]
        model = Denoiser(width=width, n_layers=len(state) // 2,
                         n_freqs=(c_in - COND_CHANNELS - LATENT_CHANNELS) // 2)
        model.load_state_dict(state)
        return cls(model)
