import math

import pytest

from patchassoc.config import ConfigError, ExperimentConfig, load_config, parse_config


class TestParse:
    def test_empty_is_defaults(self):
        cfg = parse_config("")
        assert cfg.distribution.D == 96
        assert cfg.train.N == 8192
        assert cfg.idealized.polylog == pytest.approx(math.log(128))

    def test_values_and_comments(self):
        cfg = parse_config("# header\n\ntrain.T = 7   # short\nmodel.tau=0.5\ntransfer.N_grid = 1, 4,16\nrun.out = a b\n")
        assert cfg.train.T == 7
        assert cfg.model.tau == 0.5
        assert cfg.transfer.N_grid == [1, 4, 16]
        assert cfg.run.out == "a b"

    def test_overrides_win(self):
        cfg = parse_config("train.T = 7\n", ["train.T=9", "run.seed = 3"])
        assert (cfg.train.T, cfg.run.seed) == (9, 3)

    @pytest.mark.parametrize("text, line, key", [
        ("train.T = 1\ntrain.T = x\n", 2, "train.T"),
        ("\n\nbogus.T = 1\n", 3, "bogus.T"),
        ("train.nope = 1\n", 1, "train.nope"),
        ("train.T\n", 1, None),
        ("model.tau = fast\n", 1, "model.tau"),
    ])
    def test_diagnostics(self, text, line, key):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.line == line
        assert info.value.key == key
        assert f"line {line}" in str(info.value)

    @pytest.mark.parametrize("text, key", [
        ("distribution.q = 1.5", "distribution.q"),
        ("model.p = 4", "model.p"),
        ("model.tau = 0", "model.tau"),
        ("train.eta = -1", "train.eta"),
        ("distribution.C = 4\ndistribution.grid_cols = 8", "distribution.block_rows"),
        ("distribution.L = 8", "distribution.grid_rows"),
        ("transfer.target = sideways", "transfer.target"),
        ("run.data_format = hdf5", "run.data_format"),
    ])
    def test_validation(self, text, key):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.key == key

    def test_bad_override(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_config("", ["train.T"])

    def test_random_partition_skips_grid_check(self):
        cfg = parse_config("distribution.partition = random\ndistribution.L = 8\n")
        assert cfg.distribution.D == 48


class TestResolved:
    def test_echo_round_trips(self):
        cfg = parse_config("model.tau = 0.1\ntransfer.N_grid = 2, 3\n")
        again = parse_config("\n".join(cfg.resolved_lines()))
        assert again == cfg

    def test_every_field_listed(self):
        lines = ExperimentConfig().resolved_lines()
        keys = [l.split(" = ")[0] for l in lines]
        assert len(keys) == len(set(keys))
        assert "train.eval_every" in keys and "idealized.beta" in keys

    def test_load_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("train.T = 3\n")
        assert load_config(str(tmp_path / "c.cfg"), ["train.N=5"]).train.N == 5
        assert load_config(None).train.T == 200
