import pytest

from romaeh import config


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_defaults_validate():
    cfg = config.load_config()
    assert cfg.cell.scheme == "F1-M8"
    assert len(cfg.materials()) == 2


def test_dump_round_trip(tmp_path):
    cfg = config.load_config()
    p = write(tmp_path, config.dump_config(cfg))
    back = config.load_config(p)
    for name in config._SECTIONS:
        assert getattr(back, name) == getattr(cfg, name), name


def test_partial_override(tmp_path):
    cfg = config.load_config(write(tmp_path, "[matrix]\nkappa_df = 0.02\n[macro]\nn_cells = 4\n"))
    assert cfg.matrix.kappa_df == 0.02 and cfg.matrix.E == 3500.0
    assert cfg.macro.n_cells == 4


def test_int_accepted_for_float(tmp_path):
    cfg = config.load_config(write(tmp_path, "[fiber]\nE = 70000\n"))
    assert cfg.fiber.E == 70000.0 and isinstance(cfg.fiber.E, float)


def test_relative_paths_resolve_against_file(tmp_path):
    cfg = config.load_config(write(tmp_path, '[paths]\noutput = "res"\n'))
    assert cfg.resolve(cfg.paths.output) == str(tmp_path / "res")


@pytest.mark.parametrize("text, match", [
    ("[nope]\n", "unknown section"),
    ("[cell]\nsides = 3\n", "unknown key"),
    ("[cell]\nfiber_diameter = 13.0\n", "fiber_diameter"),
    ("[cell]\nelements_per_side = 4\n", "elements_per_side"),
    ("[cell]\nelements_per_side = 16.5\n", "integer"),
    ("[cell]\nscheme = 'F1-M3'\n", "scheme"),
    ("[matrix]\nnu = 0.5\n", "nu"),
    ("[rom]\ncalibration = 1\n", "true or false"),
    ("[macro]\nn_cells = 5\n", "even"),
    ("[load]\ndirection = [0, 0, 0]\n", "direction"),
    ("[verify]\nprograms = ['torsion']\n", "program"),
    ("[dns]\ntol = -1.0\n", "positive"),
    ("[cell\n", "c.toml"),
])
def test_invalid(tmp_path, text, match):
    with pytest.raises(config.ConfigError, match=match):
        config.load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(config.ConfigError, match="not found"):
        config.load_config(tmp_path / "none.toml")


def test_shipped_configs_validate():
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.toml"))
    assert files
    for f in files:
        config.load_config(f)
