"""Minimal bidirectional transformer blocks shared by the discrete generator
and the guidance backbone.

Every attention module records the number of query-key position pairs of its
last forward pass (sequence-level, independent of batch and head count) so
cost accounting can be asserted against analytic formulas rather than
estimated.
"""

from __future__ import annotations

import torch
from torch import nn

MLP_RATIO = 4


class SelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        assert dim % num_heads == 0
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.last_pairs = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, s, c = x.shape
        qkv = self.qkv(x).reshape(b, s, 3, self.num_heads, c // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        self.last_pairs = s * s
        out = (attn @ v).transpose(1, 2).reshape(b, s, c)
        return self.proj(out)


class CrossAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        assert dim % num_heads == 0
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        self.last_pairs = 0

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        b, s_q, c = x.shape
        s_kv = memory.shape[1]
        hd = c // self.num_heads
        q = self.q(x).reshape(b, s_q, self.num_heads, hd).transpose(1, 2)
        k = self.k(memory).reshape(b, s_kv, self.num_heads, hd).transpose(1, 2)
        v = self.v(memory).reshape(b, s_kv, self.num_heads, hd).transpose(1, 2)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        self.last_pairs = s_q * s_kv
        out = (attn @ v).transpose(1, 2).reshape(b, s_q, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, MLP_RATIO * dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(MLP_RATIO * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm self-attention + MLP block."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = SelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class CrossBlock(nn.Module):
    """Pre-norm cross-attention block reading from a fixed memory."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim, eps=1e-6)
        self.norm_kv = nn.LayerNorm(dim, eps=1e-6)
        self.attn = CrossAttention(dim, num_heads)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        return x + self.attn(self.norm_q(x), self.norm_kv(memory))
