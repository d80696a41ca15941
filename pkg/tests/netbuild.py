"""Small hand-made networks for tests."""

from vdkflow.grid import Branch, Bus, BusKind, Network


def make_network(edges, loads=None, slack=None, pv=None, r=0.01, x=0.1, b=0.0):
    """Network over the bus ids appearing in ``edges``.

    ``loads`` maps bus id -> (P MW, Q MVAr); ``slack`` defaults to the lowest
    id; ``pv`` maps bus id -> (P MW, |V| setpoint).
    """
    ids = sorted({i for e in edges for i in e} | set(loads or {}))
    slack = ids[0] if slack is None else slack
    loads = loads or {}
    pv = pv or {}
    buses = []
    for i in ids:
        p, q = loads.get(i, (0.0, 0.0))
        if i == slack:
            buses.append(Bus(i, BusKind.SLACK, p, q, 1.0, gen_p=0.0, gen_q_limits=(-1e3, 1e3), gen_v_set=1.0))
        elif i in pv:
            pg, vs = pv[i]
            buses.append(Bus(i, BusKind.PV, p, q, vs, gen_p=pg, gen_q_limits=(-1e3, 1e3), gen_v_set=vs))
        else:
            buses.append(Bus(i, BusKind.PQ, p, q, 1.0))
    branches = tuple(Branch(f, t, r, x, b) for f, t in edges)
    return Network(tuple(buses), branches, 100.0)


# Fragment around bus 1 of the 118-bus system. Bus 12 neighbours 2, 3, 4, 7,
# 11, 16 and 117; bus 7 has no load so it contributes no coordinates.
FRAGMENT_EDGES = [(1, 2), (1, 3), (2, 12), (3, 12), (3, 5), (4, 12), (7, 12), (11, 12), (12, 16),
                  (12, 117), (4, 5), (5, 6), (5, 8), (5, 11)]


def fragment_network():
    ids = {i for e in FRAGMENT_EDGES for i in e}
    loads = {i: (10.0, 3.0) for i in ids if i != 7}
    return make_network(FRAGMENT_EDGES, loads, slack=1)


# Reduction toy: triangle 42-43-44 with leaf 41 on 42. Buses 7, 8 and 9 close
# a ring back to 42 so none of them is a leaf.
TRIANGLES_EDGES = [(41, 42), (43, 44), (42, 44), (42, 43), (44, 7), (7, 9), (9, 8), (8, 42)]


def triangles_network():
    ids = {i for e in TRIANGLES_EDGES for i in e}
    return make_network(TRIANGLES_EDGES, {i: (5.0, 1.0) for i in ids}, slack=9)
