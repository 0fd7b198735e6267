"""Attention and interaction forward passes on dense B x N x H x W features."""
