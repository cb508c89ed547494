import pytest

from helpers import parse_doc, triple_network_doc, twin_network_doc, viewport_for


@pytest.fixture(scope="session")
def twin_network():
    return parse_doc(twin_network_doc())


@pytest.fixture(scope="session")
def triple_network():
    return parse_doc(triple_network_doc())


@pytest.fixture(scope="session")
def twin_viewport(twin_network):
    return viewport_for(twin_network)


@pytest.fixture(scope="session")
def triple_viewport(triple_network):
    return viewport_for(triple_network)
