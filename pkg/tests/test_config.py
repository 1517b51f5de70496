import numpy as np
import pytest

from planefuse.config import Config, load_config, parse_config
from planefuse.errors import ConfigError


def test_defaults_validate():
    Config().validate()


def test_text_round_trip():
    cfg = Config()
    assert parse_config(cfg.to_text()) == cfg


def test_sections_and_unsectioned_keys():
    cfg = parse_config("voxel_leaf = 0.2\n[segmentation]\nmin_inliers = 50  # fewer\n"
                       "[matching]\nangle_tol = 5deg\nallow_flip = yes\n")
    assert cfg.filter.voxel_leaf == 0.2
    assert cfg.segmentation.min_inliers == 50
    assert cfg.matching.angle_tol == pytest.approx(np.deg2rad(5))
    assert cfg.matching.allow_flip is True


def test_unknown_keys_listed():
    with pytest.raises(ConfigError, match="bogus, segmentation.nope"):
        parse_config("bogus = 1\n[segmentation]\nnope = 2\n")
    with pytest.raises(ConfigError, match=r"\[weird\]"):
        parse_config("[weird]\nx = 1\n")


@pytest.mark.parametrize("text", [
    "[segmentation]\nmin_inliers = 2\n",
    "[cell_search]\nalpha = 1.5\n",
    "[cell_search]\nbeta = 0.5\n",
    "[filter]\nvoxel_leaf = -1\n",
    "[matching]\nrank_tol = 0\n",
    "[metascan]\nmax_iterations_per_cloud = 0\n",
    "[segmentation]\nmin_inliers = many\n",
    "[segmentation]\nmin_inliers\n",
])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file_gives_defaults(tmp_path):
    assert load_config(tmp_path / "absent.cfg") == Config()
    assert load_config(None) == Config()
    (tmp_path / "c.cfg").write_text("[metascan]\nmin_overlapping_surfaces = 4\n")
    assert load_config(tmp_path / "c.cfg").metascan.min_overlapping_surfaces == 4
