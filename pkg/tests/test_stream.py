import numpy as np
import pytest

from tok4d import model as nn
from tok4d import stream
from tok4d.errors import CacheOrderViolation, InvariantViolation
from tok4d.model import ModelConfig
from tok4d.patchify import patchify_video, unpatchify
from tok4d.stream import AttentionCache, block_causal_mask, split_tiles


def video_model(seed=0):
    return nn.Model.init(ModelConfig(blocks=2, width=32, heads=4, latent_dim=8,
                                     semantic_dim=6, gaussians_per_token=2,
                                     patch_t=4, patch_p=16), seed=seed)


def random_video(rng, frames, size=32):
    return rng.uniform(size=(frames, size, size, 3))


def test_split_even():
    tiles, pad = split_tiles(np.zeros((32, 8, 8, 3)), 16)
    assert [len(t) for t in tiles] == [16, 16]
    assert pad == 0


def test_split_remainder_tile():
    tiles, pad = split_tiles(np.zeros((20, 8, 8, 3)), 16)
    assert [len(t) for t in tiles] == [16, 4]
    assert pad == 0


def test_split_pads_last_tile():
    tiles, pad = split_tiles(np.zeros((3, 8, 8, 3)), 16)
    assert [len(t) for t in tiles] == [4]
    assert pad == 1
    assert np.all(tiles[0][3] == 0.0)


def test_split_rejects_bad_tile_len():
    with pytest.raises(InvariantViolation):
        split_tiles(np.zeros((8, 8, 8, 3)), 6)


def test_single_tile_equals_plain_encode():
    rng = np.random.default_rng(0)
    model = video_model(seed=1)
    video = random_video(rng, 16)
    result = stream.stream_encode(model, video, tile_len=16, seed=3)
    grid = patchify_video(video, 4, 16)
    feats = grid.raw @ model.p("embed.w").data.T + model.p("embed.b").data
    encoded = nn.encode_t(model, feats, grid.coords)
    mu, _, _ = nn.project_recon_t(model, encoded, np.zeros((len(grid.coords), 8)))
    assert np.abs(result.latents.mean - mu.data).max() < 1e-12


@pytest.mark.parametrize("frames", [8, 16, 20, 32])
def test_stream_equals_block_causal_full_pass(frames):
    rng = np.random.default_rng(frames)
    model = video_model(seed=2)
    video = random_video(rng, frames)
    tiled = stream.stream_encode(model, video, tile_len=16, seed=9)
    full = stream.encode_video_full(model, video, tile_len=16, seed=9)
    assert np.array_equal(tiled.coords, full.coords)
    assert np.abs(tiled.latents.mean - full.latents.mean).max() < 1e-6
    assert np.abs(tiled.latents.logvar - full.latents.logvar).max() < 1e-6
    assert np.abs(tiled.latents.sample - full.latents.sample).max() < 1e-6


def test_key_computation_counts_match_tile_sizes():
    rng = np.random.default_rng(3)
    model = video_model(seed=3)
    video = random_video(rng, 32)
    result = stream.stream_encode(model, video, tile_len=16)
    assert len(result.key_counts) == 2
    for counts, tokens in zip(result.key_counts, result.tile_tokens):
        assert all(c == tokens for c in counts)


def test_output_in_canonical_order():
    rng = np.random.default_rng(4)
    model = video_model(seed=4)
    result = stream.stream_encode(model, random_video(rng, 20), tile_len=16)
    keys = [tuple(c) for c in result.coords]
    assert keys == sorted(keys)


def test_cache_order_violation():
    cache = AttentionCache(2)
    cache.begin_tile(0)
    cache.end_tile(3)
    with pytest.raises(CacheOrderViolation):
        cache.begin_tile(3)


def test_cache_appends_accumulate():
    cache = AttentionCache(1)
    cache.begin_tile(0)
    cache.append(0, np.ones((2, 3, 8)), np.ones((2, 3, 8)))
    cache.end_tile(0)
    cache.begin_tile(1)
    cache.append(0, np.ones((2, 2, 8)), np.ones((2, 2, 8)))
    assert cache.cached_tokens == 5
    assert cache.key_counts == [[3], [2]]


def test_block_causal_mask_shape_and_rule():
    t = np.array([0, 0, 1, 2])
    mask = block_causal_mask(t, tile_len=4, patch_t=4)
    assert mask.shape == (4, 4)
    assert mask[0, 2] == -np.inf  # earlier tile cannot see later
    assert mask[2, 0] == 0.0
    assert mask[2, 3] == -np.inf
    assert np.all(np.diag(mask) == 0.0)


def test_stream_decode_matches_full_decode():
    rng = np.random.default_rng(5)
    model = video_model(seed=5)
    video = random_video(rng, 20)
    enc = stream.stream_encode(model, video, tile_len=16)
    streamed = stream.stream_decode(model, enc.latents.mean, enc.coords,
                                    enc.bounds, frames=20, tile_len=16)
    mask = block_causal_mask(enc.coords[:, 0], 16, 4)
    feats = nn.decode_t(model, enc.latents.mean, enc.coords, mask=mask)
    blocks = nn.pixel_head_t(model, feats).data
    full = unpatchify(blocks, enc.bounds, 4, 16, 20)
    assert streamed.shape == full.shape == video.shape
    assert np.abs(streamed - full).max() < 1e-6


def test_stream_decode_accepts_shuffled_token_order():
    rng = np.random.default_rng(6)
    model = video_model(seed=6)
    video = random_video(rng, 8)
    enc = stream.stream_encode(model, video, tile_len=16)
    out = stream.stream_decode(model, enc.latents.mean, enc.coords,
                               enc.bounds, frames=8, tile_len=16)
    perm = rng.permutation(len(enc.coords))
    shuffled = stream.stream_decode(model, enc.latents.mean[perm],
                                    enc.coords[perm], enc.bounds,
                                    frames=8, tile_len=16)
    assert np.abs(out - shuffled).max() < 1e-9
