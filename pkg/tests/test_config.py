import pytest
from hypothesis import given
from hypothesis import strategies as st

from ianet import config as C
from ianet.errors import ConfigurationError


class TestParse:
    def test_documented_keys_present(self):
        for key in ("stages", "widths", "ia_placement", "patch_sizes", "fusion", "sigma1", "sigma2",
                    "arrangement", "remove_last_stride", "seed", "lr", "batch", "epochs"):
            assert key in C.VALID_KEYS

    def test_values(self):
        text = "# comment\nwidths = 8, 8,16,32\nfusion = sum\nsigma1 = auto\nsigma2 = 3.5\nia_placement = none\n\nlr = 1e-3  # inline\n"
        v = C.parse_text(text)
        assert v == {"widths": (8, 8, 16, 32), "fusion": "SUM", "sigma1": None, "sigma2": 3.5, "ia_placement": (), "lr": 1e-3}

    @pytest.mark.parametrize("word,value", [("true", True), ("False", False), ("1", True), ("no", False)])
    def test_booleans(self, word, value):
        assert C.parse_text(f"remove_last_stride = {word}")["remove_last_stride"] is value

    def test_line_numbers_in_errors(self):
        with pytest.raises(ConfigurationError, match=r"cfg.txt:3: bad value for 'batch'"):
            C.parse_text("lr = 1\n\nbatch = many\n", "cfg.txt")

    def test_missing_equals(self):
        with pytest.raises(ConfigurationError, match=":1:"):
            C.parse_text("lr 0.1")

    def test_duplicate(self):
        with pytest.raises(ConfigurationError, match="duplicate"):
            C.parse_text("lr = 1\nlr = 2")

    def test_unknown_key_lists_valid(self):
        with pytest.raises(ConfigurationError) as err:
            C.parse_text("learning_rate = 0.1")
        assert "learning_rate" in str(err.value) and "patch_sizes" in str(err.value)

    def test_overrides(self):
        assert C.parse_overrides(["epochs=3", "fusion = MAX"]) == {"epochs": 3, "fusion": "MAX"}
        with pytest.raises(ConfigurationError, match="--set epochs=x"):
            C.parse_overrides(["epochs=x"])


class TestBuild:
    def test_defaults(self):
        cfg = C.load()
        assert cfg.model.widths == (16, 32, 64, 128)
        assert cfg.model.ia_placement == (2, 3)
        assert cfg.model.ia.patch_sizes == (1, 2, 3)
        assert (cfg.train.lr, cfg.train.batch, cfg.train.epochs) == (3e-4, 32, 20)
        assert cfg.data.n_train == 12

    def test_stages_must_be_four(self):
        with pytest.raises(ConfigurationError, match="4 stages"):
            C.build({"stages": 3})

    def test_invalid_combination_names_source(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("use_location = false\nuse_appearance = false\n")
        with pytest.raises(ConfigurationError, match=str(p)):
            C.load(p)

    def test_nonpositive_sigma(self):
        with pytest.raises(ConfigurationError):
            C.build({"sigma1": -1.0})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            C.load(tmp_path / "absent.txt")

    def test_override_order(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("epochs = 5\nseed = 1\n")
        cfg = C.load(p, overrides=["epochs=7"], extra={"seed": 3, "epochs": 6})
        assert cfg.train.epochs == 7 and cfg.train.seed == 3

    def test_with_values(self):
        cfg = C.with_values(C.load(), fusion="MAX")
        assert cfg.model.ia.fusion == "MAX"


class TestDump:
    def test_round_trip_defaults(self, tmp_path):
        cfg = C.load()
        p = tmp_path / "c.txt"
        p.write_text(C.dump(cfg))
        assert C.load(p) == cfg

    @given(
        st.lists(st.integers(1, 5), min_size=1, max_size=3, unique=True),
        st.sampled_from(["PROD", "SUM", "MAX"]),
        st.one_of(st.none(), st.floats(0.1, 50)),
        st.lists(st.integers(1, 4), max_size=4, unique=True),
        st.floats(1e-6, 1.0),
    )
    def test_round_trip(self, ks, fusion, sigma, placement, lr):
        cfg = C.build({"patch_sizes": tuple(ks), "fusion": fusion, "sigma2": sigma,
                       "ia_placement": tuple(placement), "lr": lr})
        assert C.build(C.parse_text(C.dump(cfg))) == cfg
