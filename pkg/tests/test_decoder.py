import numpy as np
import pytest
from helpers import TINY, rand, tiny_model, tiny_record

from rescap import tensor as T
from rescap.decoder import (
    DecoderState,
    ModelDims,
    VariantFlags,
    decode_step_batch,
    forward_teacher_forced,
    init_model,
    lstm_cell_step,
    make_variant,
    model_from_arrays,
    model_to_arrays,
    pool_record,
    pool_records,
    restd_lstm_step,
    teacher_forced_batch,
)
from rescap.tensor import Tensor
from rescap.vocab import BOS, EOS, Caption


class TestLstmCell:
    def test_zero_everything(self):
        w = Tensor(np.zeros((3, 8)))
        b = Tensor(np.zeros(8))
        h, c = lstm_cell_step(Tensor([0.5]), Tensor(np.zeros(2)), Tensor(np.zeros(2)), w, b)
        np.testing.assert_array_equal(c.data, np.zeros(2))
        np.testing.assert_array_equal(h.data, np.zeros(2))

    def test_zero_weights_carry_cell(self):
        # all gates sit at sigmoid(0)=0.5, candidate tanh(0)=0
        w = Tensor(np.zeros((2, 4)))
        b = Tensor(np.zeros(4))
        h, c = lstm_cell_step(Tensor([1.0]), Tensor([0.0]), Tensor([2.0]), w, b)
        np.testing.assert_allclose(c.data, [1.0])
        np.testing.assert_allclose(h.data, [0.5 * np.tanh(1.0)], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            lstm_cell_step(Tensor([1.0]), Tensor([0.0]), Tensor([0.0, 0.0]),
                           Tensor(np.zeros((2, 4))), Tensor(np.zeros(4)))

    def test_gradient_vs_finite_differences(self):
        for seed in range(5):
            w = Tensor(rand(900 + seed, 5, 12), requires_grad=True)
            b = Tensor(rand(910 + seed, 12), requires_grad=True)
            x = Tensor(rand(920 + seed, 2), requires_grad=True)
            h = Tensor(rand(930 + seed, 3), requires_grad=True)
            c = Tensor(rand(940 + seed, 3), requires_grad=True)
            probe = rand(950 + seed, 3)

            def f(params):
                h2, c2 = lstm_cell_step(x, h, c, w, b)
                return T.sum_all(T.mul(T.add(h2, c2), Tensor(probe)))

            assert T.grad_check(f, [w, b, x, h, c], step=1e-5) < 1e-4


class TestDecodeStep:
    def test_fresh_zero_output_layer_gives_uniform(self):
        model = tiny_model(seed=1)
        model.out_w.data[:] = 0.0
        model.out_b.data[:] = 0.0
        feats = pool_record(model, tiny_record(5))
        state = DecoderState.initial(model.dims)
        _, logits, _ = restd_lstm_step(state, BOS, feats, model)
        p = T.softmax(logits).data
        np.testing.assert_allclose(p, np.full(model.dims.vocab_size, 1 / model.dims.vocab_size))

    def test_single_region_attention_is_one(self):
        model = tiny_model(seed=2)
        feats = pool_record(model, tiny_record(6, n_regions=1))
        state = DecoderState.initial(model.dims)
        _, _, attn = restd_lstm_step(state, BOS, feats, model)
        np.testing.assert_allclose(attn.data, [1.0])

    def test_logits_softmax_is_probability_vector(self):
        model = tiny_model(seed=3)
        feats = pool_record(model, tiny_record(7))
        state = DecoderState.initial(model.dims)
        for tok in (BOS, 4, 5):
            state, logits, attn = restd_lstm_step(state, tok, feats, model)
            assert abs(T.softmax(logits).data.sum() - 1.0) <= 1e-9
            assert abs(attn.data.sum() - 1.0) <= 1e-9

    def test_out_of_range_token(self):
        model = tiny_model(seed=4)
        feats = pool_record(model, tiny_record(8))
        with pytest.raises(ValueError, match="out of range"):
            restd_lstm_step(DecoderState.initial(model.dims), model.dims.vocab_size, feats, model)

    def test_width_mismatch(self):
        model = tiny_model(seed=5)
        wide = tiny_record(9, dims=ModelDims(vocab_size=9, feat_dim=8))
        with pytest.raises(T.ShapeError):
            pool_record(model, wide)

    def test_full_step_gradients_per_block(self):
        from rescap.gradcheck import check_blocks

        worst = check_blocks(seeds=range(5))
        for name, err in worst.items():
            assert err < 1e-4, f"block {name}: {err}"


class TestTeacherForced:
    def test_uniform_model_loss_is_log_v(self):
        model = tiny_model(seed=6)
        model.out_w.data[:] = 0.0
        model.out_b.data[:] = 0.0
        loss, _ = forward_teacher_forced(tiny_record(10), Caption.from_content([4, 5]), model)
        assert loss.item() == pytest.approx(np.log(model.dims.vocab_size))

    def test_loss_matches_step_logits(self):
        model = tiny_model(seed=7)
        cap = Caption.from_content([5, 4, 6])
        loss, step_logits = forward_teacher_forced(tiny_record(11), cap, model)
        targets = list(cap.token_ids[1:])
        manual = 0.0
        for logits, tgt in zip(step_logits, targets):
            z = logits - logits.max()
            manual += -(z[tgt] - np.log(np.exp(z).sum()))
        assert loss.item() == pytest.approx(manual / len(targets), rel=1e-12)

    def test_fresh_model_loss_near_log_v(self):
        model = tiny_model(seed=8)
        loss, _ = forward_teacher_forced(tiny_record(12), Caption.from_content([4, 5, 6]), model)
        v = model.dims.vocab_size
        assert abs(loss.item() - np.log(v)) < 0.1 * np.log(v)

    def test_empty_caption_rejected(self):
        model = tiny_model(seed=9)
        with pytest.raises(ValueError):
            teacher_forced_batch(model, [tiny_record(13)], [Caption((BOS, EOS))])

    def test_region_permutation_leaves_loss_and_logits(self):
        model = tiny_model(seed=10)
        record = tiny_record(14, n_regions=4)
        cap = Caption.from_content([4, 6])
        loss1, logits1 = forward_teacher_forced(record, cap, model)
        shuffled = type(record)(
            image_id=record.image_id,
            grids=[record.grids[i] for i in (2, 0, 3, 1)],
            global_feat=record.global_feat,
        )
        loss2, logits2 = forward_teacher_forced(shuffled, cap, model)
        assert abs(loss1.item() - loss2.item()) <= 1e-12
        for a, b in zip(logits1, logits2):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_global_feat_ignored_when_flag_off(self):
        dims = TINY
        model = init_model(dims, make_variant("TD"), seed=11)
        record = tiny_record(15)
        cap = Caption.from_content([4, 5])
        loss1, _ = forward_teacher_forced(record, cap, model)
        bumped = type(record)(
            image_id=record.image_id,
            grids=record.grids,
            global_feat=record.global_feat + 100.0,
        )
        loss2, _ = forward_teacher_forced(bumped, cap, model)
        assert loss1.item() == loss2.item()

    def test_determinism_bit_identical(self):
        def run():
            model = tiny_model(seed=12)
            loss, _, _ = teacher_forced_batch(
                model, [tiny_record(16), tiny_record(17)],
                [Caption.from_content([4, 5]), Caption.from_content([6])],
            )
            return loss.item()

        assert run() == run()

    def test_batch_equals_single(self):
        model = tiny_model(seed=13)
        records = [tiny_record(18), tiny_record(19)]
        caps = [Caption.from_content([4, 5, 6]), Caption.from_content([7])]
        batch_loss, _, _ = teacher_forced_batch(model, records, caps)
        singles = [forward_teacher_forced(r, c, model)[0].item() for r, c in zip(records, caps)]
        assert batch_loss.item() == pytest.approx(np.mean(singles), rel=1e-12)


class TestVariants:
    def test_bu_restd(self):
        f = make_variant("BU+ResTd")
        assert f.lower_pooling_mode == "residual_attention"
        assert f.use_global_feat and f.upper_residual

    def test_bu_only_average(self):
        assert make_variant("BU_Only").lower_pooling_mode == "average"

    def test_bu_td_attention(self):
        assert make_variant("BU+Td").lower_pooling_mode == "attention"

    def test_td_differs_in_exactly_two_flags(self):
        td = make_variant("TD")
        full = make_variant("BU+ResTd")
        diffs = [name for name in ("lower_pooling_mode", "use_global_feat",
                                   "upper_residual", "feed_h1_to_lstm2")
                 if getattr(td, name) != getattr(full, name)]
        assert sorted(diffs) == ["upper_residual", "use_global_feat"]

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            make_variant("BU+Everything")

    def test_feed_h1_flag_changes_logits_not_shapes(self):
        from dataclasses import replace

        flags = make_variant("BU+ResTd")
        minimal = replace(flags, feed_h1_to_lstm2=False)
        m_full = init_model(TINY, flags, seed=30)
        m_min = init_model(TINY, minimal, seed=30)
        record = tiny_record(40)
        cap = Caption.from_content([4, 5])
        loss_full, logits_full = forward_teacher_forced(record, cap, m_full)
        loss_min, logits_min = forward_teacher_forced(record, cap, m_min)
        assert logits_full[0].shape == logits_min[0].shape
        assert loss_full.item() != loss_min.item()

    def test_parameter_shapes_identical_across_variants(self):
        shapes = []
        for name in ("BU_Only", "BU+Td", "BU+ResTd", "TD"):
            model = init_model(TINY, make_variant(name), seed=20)
            shapes.append({k: v.shape for k, v in model.named_parameters().items()})
        assert all(s == shapes[0] for s in shapes)


class TestModelArrays:
    def test_roundtrip(self):
        model = tiny_model(seed=21)
        arrays = model_to_arrays(model)
        again = model_from_arrays(arrays)
        assert again.flags == model.flags and again.dims == model.dims
        for name, t in model.named_parameters().items():
            np.testing.assert_array_equal(t.data, again.named_parameters()[name].data)

    def test_shape_conflict(self):
        arrays = model_to_arrays(tiny_model(seed=22))
        arrays["out.w"] = arrays["out.w"][:, :-1]
        with pytest.raises(ValueError, match="out.w"):
            model_from_arrays(arrays)
