"""Small fixtures shared by the unit tests."""
from epinet.agents import init_population
from epinet.landscape import generate_landscape
from epinet.runtime import _profile_for
from epinet.stores import Stores
from epinet.utils import pad_embedding


def world(n=6, dim=2, seed=0):
    """Population, landscape and stores with every agent registered."""
    agents = init_population(n, dim, seed)
    land = generate_landscape(dim, 12, seed)
    stores = Stores()
    for a in agents:
        stores.register_agent(_profile_for(a), pad_embedding(a.expertise.center.coords))
    return agents, land, stores


def view_of(stores, agents, round_=0, attention=None):
    return stores.snapshot(round_, {a.agent_id: a.belief.copy() for a in agents}, attention or {})
