import pytest

from addrforge.geo_model import ingest_locations, ingest_roads
from addrforge.synthcity import build_synthetic_city


@pytest.fixture(scope="session")
def synth_city(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthcity")
    return build_synthetic_city(root, n_locations=20, n_views=4, seed=7)


@pytest.fixture(scope="session")
def city_index(synth_city):
    index = ingest_locations(synth_city["locations"], city_id="synthcity")
    roads, _ = ingest_roads(synth_city["roads"])
    return index.with_roads(roads)


@pytest.fixture(scope="session")
def gazetteer(city_index):
    return city_index.gazetteer()
