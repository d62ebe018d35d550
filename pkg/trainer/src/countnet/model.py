"""Two-branch convolutional recurrent counting network.

The spatial branch encodes PHAT cross-correlations (direction cues), the
semantic branch encodes multichannel spectrograms through a trainable
Gabor filterbank (vehicle-type cues). Per-frame features from both
branches are concatenated, fused by time-distributed layers, summarized
by a two-layer GRU, and regressed to the four per-category counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass(frozen=True)
class SpecAugmentConfig:
    enabled: bool = True
    freq_masks: int = 2
    freq_width: int = 12
    time_masks: int = 2
    time_width: int = 50


@dataclass(frozen=True)
class ModelConfig:
    gcc_pairs: int = 6
    lag_bins: int = 65
    freq_bins: int = 513
    audio_channels: int = 4
    filterbank_channels: int = 96
    filterbank_fmin_hz: float = 60.0
    filterbank_fmax_hz: float = 7800.0
    sample_rate: int = 16_000
    conv_filters: tuple[int, int, int] = (32, 32, 64)
    td_width: int = 128
    gru_width: int = 128
    gru_layers: int = 2
    output_dim: int = 4
    specaugment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)


def _hz_to_mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


class GaborFilterbank(nn.Module):
    """Trainable Gaussian-magnitude filters over spectrogram bins.

    Centers are initialized on a mel grid over [fmin, fmax] with
    bandwidths matching the local mel spacing; both are trained.
    Output is log-compressed filter energy.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        k = config.filterbank_channels
        mels = torch.linspace(_hz_to_mel(config.filterbank_fmin_hz), _hz_to_mel(config.filterbank_fmax_hz), k)
        centers = torch.tensor([_mel_to_hz(float(m)) for m in mels])
        spacing = torch.gradient(centers)[0]
        self.center_hz = nn.Parameter(centers)
        self.bandwidth_hz = nn.Parameter(spacing.clamp(min=20.0))
        bin_freqs = torch.linspace(0.0, config.sample_rate / 2.0, config.freq_bins)
        self.register_buffer("bin_freqs", bin_freqs)
        self._min_bw = float(bin_freqs[1] - bin_freqs[0])

    def weights(self) -> torch.Tensor:
        sigma = self.bandwidth_hz.clamp(min=self._min_bw)
        z = (self.bin_freqs[None, :] - self.center_hz[:, None]) / sigma[:, None]
        return torch.exp(-0.5 * z * z)

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        # spec: (B, C, T, F) magnitude -> (B, C, T, K) log filter energy
        power = spec * spec
        energy = torch.einsum("bctf,kf->bctk", power, self.weights())
        return torch.log(energy + 1e-8)


class SpecAugment(nn.Module):
    """Training-time masking on the filterbank output (B, C, T, K)."""

    def __init__(self, config: SpecAugmentConfig):
        super().__init__()
        self.config = config

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if not self.training or not cfg.enabled:
            return x
        batch, _, n_frames, n_channels = x.shape
        x = x.clone()
        for b in range(batch):
            for _ in range(cfg.freq_masks):
                width = int(torch.randint(0, cfg.freq_width + 1, (1,)))
                if width and n_channels > width:
                    start = int(torch.randint(0, n_channels - width, (1,)))
                    x[b, :, :, start : start + width] = 0.0
            for _ in range(cfg.time_masks):
                width = int(torch.randint(0, cfg.time_width + 1, (1,)))
                if width and n_frames > width:
                    start = int(torch.randint(0, n_frames - width, (1,)))
                    x[b, :, start : start + width, :] = 0.0
        return x


class ConvEncoder(nn.Module):
    """Three stride-2 3x3 conv layers (32, 32, 64 filters)."""

    def __init__(self, in_channels: int, filters: tuple[int, int, int]):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for out in filters:
            layers += [nn.Conv2d(prev, out, kernel_size=3, stride=2, padding=1), nn.ReLU()]
            prev = out
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TimeDistributedMlp(nn.Module):
    """Fully connected layers applied independently to each time frame."""

    def __init__(self, in_dim: int, widths: tuple[int, ...]):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_dim
        for w in widths:
            layers += [nn.Linear(prev, w), nn.ReLU()]
            prev = w
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def _ceil_div_thrice(n: int) -> int:
    for _ in range(3):
        n = (n + 1) // 2
    return n


class CountingCrnn(nn.Module):
    """The full counting network; forward returns (batch, 4) raw counts."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.filterbank = GaborFilterbank(config)
        self.specaugment = SpecAugment(config.specaugment)
        self.gcc_encoder = ConvEncoder(config.gcc_pairs, config.conv_filters)
        self.spec_encoder = ConvEncoder(config.audio_channels, config.conv_filters)

        gcc_flat = config.conv_filters[-1] * _ceil_div_thrice(config.lag_bins)
        spec_flat = config.conv_filters[-1] * _ceil_div_thrice(config.filterbank_channels)
        w = config.td_width
        self.gcc_td = TimeDistributedMlp(gcc_flat, (w, w))
        self.spec_td = TimeDistributedMlp(spec_flat, (w, w))
        self.fusion_td = TimeDistributedMlp(2 * w, (w, w, w))
        self.gru = nn.GRU(w, config.gru_width, num_layers=config.gru_layers, batch_first=True)
        self.head = nn.Linear(config.gru_width, config.output_dim)

    @staticmethod
    def _frames_first(encoded: torch.Tensor) -> torch.Tensor:
        # (B, C, T', D') -> (B, T', C*D')
        b, c, t, d = encoded.shape
        return encoded.permute(0, 2, 1, 3).reshape(b, t, c * d)

    def forward(self, gcc: torch.Tensor, spec: torch.Tensor) -> torch.Tensor:
        if gcc.shape[2] != spec.shape[2]:
            raise ValueError(
                f"branch inputs are not frame-aligned: gcc has {gcc.shape[2]} frames, "
                f"spectrogram has {spec.shape[2]}"
            )
        filtered = self.specaugment(self.filterbank(spec))
        a = self._frames_first(self.gcc_encoder(gcc))
        b = self._frames_first(self.spec_encoder(filtered))
        fused = self.fusion_td(torch.cat([self.gcc_td(a), self.spec_td(b)], dim=-1))
        out, _ = self.gru(fused)
        return self.head(out[:, -1, :])

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def build_model(config: ModelConfig | None = None) -> CountingCrnn:
    torch.manual_seed_called = None  # seeding is the trainer's job; keep builds pure
    return CountingCrnn(config)
