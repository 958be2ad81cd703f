"""Model assembly: parameter accounting, forward contracts, checkpoints."""

import hashlib
import json
import pathlib

import numpy as np
import pytest

from adair import network as N
from adair import tensor as T
from adair.errors import ConfigMismatch, CorruptCheckpoint, EmptyInput, InvalidConfig
from adair.tensor import Tensor
from conftest import fd_on_coords, randomize_params

GOLDEN = pathlib.Path(__file__).parent / "golden"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_text_roundtrip():
    cfg = N.desk_config(mask_mode="fixed", aflb_placement=("gap2",))
    again = N.ModelConfig.from_text(cfg.to_text())
    assert again == cfg


def test_config_unknown_key_rejected():
    with pytest.raises(InvalidConfig):
        N.ModelConfig.from_text("base_channels = 8\nbogus_knob = 3\n")


@pytest.mark.parametrize("bad", [
    dict(base_channels=7),
    dict(heads=(3, 2, 4, 8)),
    dict(tb_counts=(1, 1, 1)),
    dict(mask_mode="sometimes"),
    dict(aflb_placement=("gap1", "gap1")),
    dict(aflb_placement=("gap9",)),
    dict(precision="float16"),
    dict(gdfn_expansion=0.5),
])
def test_config_validation_rejects(bad):
    with pytest.raises(InvalidConfig):
        N.desk_config(**bad).validate()


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def test_paper_scale_baseline_matches_published_count():
    model = N.build_model(N.paper_config(aflb_placement=(), precision="float32"))
    total, _ = N.count_parameters(model)
    assert abs(total - 26.13e6) / 26.13e6 < 0.03, f"baseline {total:,}"


def test_paper_scale_full_count_within_band():
    base = N.build_model(N.paper_config(aflb_placement=(), precision="float32"))
    full = N.build_model(N.paper_config(precision="float32"))
    base_total, _ = N.count_parameters(base)
    full_total, sections = N.count_parameters(full)
    assert 26.5e6 <= full_total <= 31.0e6, f"full {full_total:,}"
    overhead = full_total - base_total
    # published overhead is 2.64M; ours lands within ten percent of it
    assert abs(overhead - 2.64e6) / 2.64e6 < 0.10, f"overhead {overhead:,}"
    assert sections["aflb"] == overhead


def test_count_closed_form_1x1_conv():
    import adair.blocks as B
    conv = B.Conv2d(np.random.default_rng(0), 5, 7, 1, bias=True)
    total = sum(p.size for _, p in conv.named_parameters())
    assert total == 5 * 7 + 7


def test_transformer_block_hand_ledger():
    # dim 8, 1 head, expansion 2.66 -> hidden = round(21.28) = 21
    import adair.blocks as B
    tb = B.TransformerBlock(np.random.default_rng(0), 8, 1, 2.66)
    attn = 3 * 8 * 8 + 3 * 8 * 9 + 8 * 8 + 1      # qkv 1x1, qkv dw, out, temperature
    norms = 2 * (8 + 8)
    gdfn = 2 * 8 * 21 + 2 * 21 * 9 + 21 * 8       # two expands, two dws, contract
    expected = attn + norms + gdfn
    assert sum(p.size for _, p in tb.named_parameters()) == expected


def test_desk_count_matches_hand_summed_sections():
    model = N.build_model(N.desk_config(aflb_placement=()))
    total, sections = N.count_parameters(model)
    assert total == sum(sections.values())
    # embed 3*8*9, downs 8*4*9 + 16*8*9 + 32*16*9, output 16*3*9
    assert sections["output"] == 16 * 3 * 9


# ---------------------------------------------------------------------------
# build determinism and forward contracts
# ---------------------------------------------------------------------------

def test_same_seed_bit_identical_weights():
    a = N.build_model(N.desk_config(), seed=11)
    b = N.build_model(N.desk_config(), seed=11)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)


@pytest.mark.parametrize("hw", [17, 32, 64])
def test_forward_shape_contract(hw):
    model = N.build_model(N.desk_config(), seed=2)
    img = np.random.default_rng(hw).uniform(size=(1, 3, hw, hw))
    out = model(img)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_zero_output_projection_gives_global_residual_identity():
    model = N.build_model(N.desk_config(), seed=3)
    model.output_proj.weight.data[:] = 0.0
    img = np.random.default_rng(5).uniform(size=(2, 3, 24, 24))
    np.testing.assert_array_equal(model(img), np.clip(img, 0.0, 1.0).astype(np.float32))


def test_empty_input_rejected():
    model = N.build_model(N.desk_config(), seed=4)
    with pytest.raises(EmptyInput):
        model(np.zeros((0, 3, 16, 16)))


def test_aflb_count_matches_placement():
    for placement in [(), ("gap1",), ("gap1", "gap3"), ("gap1", "gap2", "gap3")]:
        model = N.build_model(N.desk_config(aflb_placement=placement))
        assert len(model.aflbs()) == len(placement)


def test_aflb_transparency_against_baseline():
    # zeroing each frequency block's merge projection makes the full model
    # equal a baseline model carrying identical weights elsewhere
    full = N.build_model(N.desk_config(precision="float64"), seed=7)
    base = N.build_model(N.desk_config(precision="float64", aflb_placement=()), seed=8)
    full_params = dict(full.named_parameters())
    for name, p in base.named_parameters():
        p.data[:] = full_params[name].data
    for aflb in full.aflbs():
        aflb.modulation.merge_attn.out_proj.weight.data[:] = 0.0
    img = np.random.default_rng(9).uniform(size=(1, 3, 16, 16))
    np.testing.assert_allclose(full(img), base(img), atol=1e-12)


def test_forward_golden_hash():
    # frozen by the first verified build; guards cross-run reproducibility
    path = GOLDEN / "desk_forward.json"
    record = json.loads(path.read_text())
    model = N.build_model(N.desk_config(precision="float64"), seed=record["seed"])
    rng = np.random.default_rng(record["input_seed"])
    img = rng.uniform(size=(1, 3, 16, 16))
    out = model(img)
    digest = hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest()
    assert digest == record["sha256"]


def test_full_model_gradient_spot_check():
    model = N.build_model(N.desk_config(precision="float64"), seed=10)
    randomize_params(model, np.random.default_rng(11), std=0.15)
    img = np.random.default_rng(12).uniform(size=(1, 3, 16, 16))
    target = np.random.default_rng(13).uniform(size=(1, 3, 16, 16))

    def loss_fn():
        out = model(img, train=True)
        return (out - Tensor(target)).abs().mean()

    rng = np.random.default_rng(14)
    for param in (model.output_proj.weight, model.patch_embed.weight,
                  model.aflb2.modulation.merge_proj.weight):
        coords = rng.choice(param.size, size=4, replace=False)
        err = fd_on_coords(loss_fn, param, coords, h=1e-5)
        assert err < 1e-3, f"fd error {err}"


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _state_for(model, rng):
    state = {"step": 17, "m": {}, "v": {}}
    for name, p in model.named_parameters():
        state["m"][name] = rng.normal(size=p.shape).astype(p.data.dtype)
        state["v"][name] = np.abs(rng.normal(size=p.shape)).astype(p.data.dtype)
    return state


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = N.build_model(N.desk_config(), seed=21)
    rng = np.random.default_rng(22)
    state = _state_for(model, rng)
    path = tmp_path / "model.ckpt"
    N.save_checkpoint(model, path, optimizer_state=state)
    img = rng.uniform(size=(1, 3, 16, 16))
    before = model(img)
    loaded, loaded_state = N.load_checkpoint(path)
    np.testing.assert_array_equal(loaded(img), before)
    assert loaded_state["step"] == 17
    for name in state["m"]:
        np.testing.assert_array_equal(loaded_state["m"][name], state["m"][name])
        np.testing.assert_array_equal(loaded_state["v"][name], state["v"][name])


def test_checkpoint_truncated_rejected(tmp_path):
    model = N.build_model(N.desk_config(), seed=23)
    path = tmp_path / "model.ckpt"
    N.save_checkpoint(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CorruptCheckpoint):
        N.load_checkpoint(path)


def test_checkpoint_bad_magic_and_flipped_byte(tmp_path):
    model = N.build_model(N.desk_config(), seed=24)
    path = tmp_path / "model.ckpt"
    N.save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptCheckpoint):
        N.load_checkpoint(path)
    N.save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptCheckpoint):
        N.load_checkpoint(path)


def test_checkpoint_reports_float32_precision(tmp_path):
    model = N.build_model(N.desk_config(precision="float32"), seed=25)
    path = tmp_path / "model.ckpt"
    N.save_checkpoint(model, path)
    loaded, _ = N.load_checkpoint(path)
    assert loaded.config.precision == "float32"
    assert all(p.data.dtype == np.float32 for p in loaded.parameters())


def test_checkpoint_config_mismatch(tmp_path):
    model = N.build_model(N.desk_config(), seed=26)
    path = tmp_path / "model.ckpt"
    N.save_checkpoint(model, path)
    other = N.build_model(N.desk_config(base_channels=16), seed=26)
    with pytest.raises(ConfigMismatch):
        N.load_checkpoint(path, model=other)
