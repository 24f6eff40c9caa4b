import pytest

from iotpipe import sensorthings

# Verbatim Thing body for the deployed sensor node, including its office
# location; used across backend and acceptance tests.
THING_BODY = {
    "name": "RIOT Alpha",
    "description": "IoT sensor node",
    "properties": {
        "owner": "iNET RG, HAW Hamburg",
        "device": "Phytec phyNODE",
        "operating system": "RIOT-OS",
    },
    "Locations": [{
        "name": "BT7-R580A",
        "description": "Office",
        "encodingType": "application/vnd.geo+json",
        "location": {
            "type": "Point",
            "coordinates": [10.022993, 53.557189],
        },
    }],
}


@pytest.fixture
def store():
    return sensorthings.Store()


@pytest.fixture
def seeded_store():
    s = sensorthings.Store()
    sensorthings.seed_default_entities(s)
    return s


@pytest.fixture
def backend(seeded_store):
    server = sensorthings.BackendServer(seeded_store).start()
    yield server
    server.stop()
