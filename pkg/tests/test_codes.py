# tests/test_codes.py
import itertools

import pytest

from ipa.aggregate import AggregatorKind, CombineMode
from ipa.codes import (ClassifierSpec, ModelCode, ModelConfig, Task, count_params, interaction_param_count,
                       parse_code, preset, preset_names, resolve_model)
from ipa.errors import CodeParseError, ConfigError
from ipa.interaction import InteractionKind
from ipa.layers import PoolingKind
from ipa.model import IpaModel


class TestParseCode:
    def test_named_codes(self):
        assert parse_code("PFL") == ModelCode(InteractionKind.PROJECTED, PoolingKind.FIELD, False, AggregatorKind.LAYER)
        assert parse_code("WGT") == ModelCode(InteractionKind.WEIGHTED, PoolingKind.GLOBAL, False, AggregatorKind.TERM)

    def test_case_insensitive(self):
        assert parse_code("nfd") == parse_code("NFD")

    @pytest.mark.parametrize("text", ["PF'D", "PRD", "PF′D", "prd"])
    def test_residual_spellings(self, text):
        code = parse_code(text)
        assert code.residual and code.pooling is PoolingKind.FIELD
        assert str(code) == "PF'D"

    @pytest.mark.parametrize("text,letter", [("XFL", "X"), ("PXL", "X"), ("PFQ", "Q"), ("PFLL", "L")])
    def test_error_names_offending_letter(self, text, letter):
        with pytest.raises(CodeParseError) as info:
            parse_code(text)
        assert info.value.letter == letter
        assert f"'{letter}'" in str(info.value)

    def test_parse_error_is_config_error(self):
        with pytest.raises(ConfigError):
            parse_code("")
        with pytest.raises(ConfigError):
            parse_code("PF")


class TestPresets:
    def test_second_order_family(self):
        for name, code in [("FM", "NFD"), ("FwFM", "WFD"), ("FvFM", "DFD"), ("FmFM", "PFD")]:
            config = preset(name)
            assert str(config.code) == code
            assert config.depth == 2
            assert config.symmetric_share and config.first_order
            assert config.classifier.kind == "sum"

    def test_high_order_presets(self):
        assert preset("HOFM").depth > 2
        cin = preset("xDeepFM-CIN")
        assert str(cin.code) == "WGT" and cin.term_scalar_pool
        assert cin.resolved_combine_mode() is CombineMode.CONCAT
        cross = preset("DCNv2-CrossNet")
        assert cross.residual and str(cross.code) == "PF'D"
        assert preset("PFL").depth >= 2

    def test_lookup_is_case_insensitive_and_overridable(self):
        assert preset("fwfm", k=8).k == 8
        assert "xDeepFM-CIN" in preset_names()

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("DeepFM")

    def test_resolve_model_accepts_codes(self):
        assert str(resolve_model("NGD").code) == "NGD"
        assert resolve_model("fm").first_order


class TestClassifierSpec:
    def test_parse(self):
        assert ClassifierSpec.parse("sum") == ClassifierSpec()
        assert ClassifierSpec.parse("Linear").kind == "linear"
        mlp = ClassifierSpec.parse("mlp:64,32")
        assert mlp.hidden == (64, 32) and str(mlp) == "mlp:64,32"

    @pytest.mark.parametrize("text", ["mlp", "mlp:0", "mlp:a", "attention"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            ClassifierSpec.parse(text)


class TestModelConfig:
    def test_validation(self):
        code = parse_code("PFL")
        with pytest.raises(ConfigError):
            ModelConfig(code, k=0)
        with pytest.raises(ConfigError):
            ModelConfig(code, dropout=1.0)
        with pytest.raises(ConfigError):
            ModelConfig(code, depth=1, include_first_layer=False)
        with pytest.raises(ConfigError):
            ModelConfig(code, vocab_sizes=(3, 0))

    def test_unbound_config_has_no_pooling_spec(self):
        with pytest.raises(ConfigError):
            ModelConfig(parse_code("PFL")).pooling_spec()

    def test_dict_round_trip(self):
        config = ModelConfig(parse_code("PGE"), k=4, depth=3, global_width=(5, 2),
                             classifier=ClassifierSpec.parse("mlp:8"), task=Task.REGRESSION,
                             combine_mode=CombineMode.CONCAT, vocab_sizes=(3, 4))
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestCountParams:
    def test_projected_field_interaction_count(self):
        config = ModelConfig(parse_code("PFD"), k=2, depth=3, vocab_sizes=(1, 1, 1))
        assert interaction_param_count(config) == 2 * 3 * 2 * 4 == 48

    def test_layer_aggregator_adds_one_scalar_per_layer(self):
        direct = ModelConfig(parse_code("PFD"), k=2, depth=3, vocab_sizes=(1, 1, 1))
        layer = ModelConfig(parse_code("PFL"), k=2, depth=3, vocab_sizes=(1, 1, 1))
        assert count_params(layer) - count_params(direct) == 3

    def test_fm_preset(self):
        vocab, k = (7, 3, 5), 4
        config = preset("FM", k=k).bind(vocab)
        v = sum(vocab)
        assert count_params(config) == v * k + v + 1
        assert count_params(preset("FM", k=k, first_order=False, bias=False).bind(vocab)) == v * k

    GRID = list(itertools.product(
        "NWDP", ["F", "G", "F'"], "DLTE", [dict(vocab_sizes=(3, 2), k=2, depth=2), dict(vocab_sizes=(2, 3, 4), k=3, depth=3)]
    ))

    @pytest.mark.parametrize("interaction,pooling,aggregator,shape", GRID)
    def test_matches_reflected_count(self, interaction, pooling, aggregator, shape):
        config = ModelConfig(parse_code(interaction + pooling + aggregator), global_width=(4,), **shape)
        model = IpaModel(config, seed=1)
        assert model.n_params() == count_params(config)

    def test_grid_size(self):
        assert len(self.GRID) == 96

    @pytest.mark.parametrize("overrides", [
        dict(classifier=ClassifierSpec.parse("linear")),
        dict(classifier=ClassifierSpec.parse("mlp:5,3"), first_order=True),
        dict(include_self=True, bias=False),
        dict(symmetric_share=True, include_first_layer=False),
    ])
    def test_options_match_reflected_count(self, overrides):
        config = ModelConfig(parse_code("DFE"), k=3, depth=3, vocab_sizes=(4, 2, 3), **overrides)
        assert IpaModel(config).n_params() == count_params(config)

    def test_term_scalar_pool_count(self):
        config = preset("xDeepFM-CIN", k=3, global_width=(4,)).bind((5, 6))
        assert IpaModel(config).n_params() == count_params(config)
