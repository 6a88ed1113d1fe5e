import numpy as np
import pytest
import torch
from torchvision.models import vgg16

from declip.imagecore import write_png
from declip.nets import FeatureExtractor

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_vgg_state(seed: int = 0) -> dict:
    """Seeded, untrained VGG16 trunk weights (no download in the sandbox)."""
    torch.manual_seed(seed)
    return vgg16(weights=None).features.state_dict()


@pytest.fixture(scope="session")
def vgg_weights_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("vgg") / "vgg16_features.pt"
    torch.save(random_vgg_state(), path)
    return path


@pytest.fixture(scope="session")
def extractor(vgg_weights_path):
    return FeatureExtractor(vgg_weights_path)


def natural_images(n: int = 8, height: int = 96) -> list[np.ndarray]:
    """Downscaled scikit-image sample photographs as float RGB in [0, 1]."""
    from skimage import data
    from skimage.transform import resize

    names = ["astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry",
             "hubble_deep_field", "retina", "camera"]
    out = []
    for name in names[:n]:
        im = getattr(data, name)()
        if im.ndim == 2:
            im = np.stack([im] * 3, axis=-1)
        im = resize(im, (height, round(height * im.shape[1] / im.shape[0])),
                    anti_aliasing=True)
        out.append(np.clip(im, 0.0, 1.0))
    return out


@pytest.fixture(scope="session")
def photos():
    return natural_images()


@pytest.fixture
def image_dir(tmp_path, photos):
    d = tmp_path / "images"
    for i, im in enumerate(photos[:6]):
        write_png(d / f"img{i}.png", im[:64, :80])
    return d


_acceptance = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE in report.nodeid and (report.when == "call" or report.failed):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _acceptance.items():
        terminalreporter.write_line(f"{status}  {name}")
