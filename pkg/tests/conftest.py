import numpy as np
import pytest

from bqnet import (ArrivalProcess, BatchLaw, NetworkModel, ServiceLaw,
                   ServiceNode, UnivariateLaw, build_markov_kernel)


@pytest.fixture(scope="session")
def single_exp_node():
    return ServiceNode(ServiceLaw.exponential(1.0), [0.0, 1.0])


@pytest.fixture(scope="session")
def mm_model(single_exp_node):
    """M/M/infinity: J=1, lambda=1, mu=1, single arrivals."""
    return NetworkModel(J=1, arrival=ArrivalProcess.constant(1.0),
                        batch=BatchLaw.constant([1]), nodes=[single_exp_node])


@pytest.fixture(scope="session")
def mm_kernel(single_exp_node):
    return build_markov_kernel([single_exp_node], 1)


@pytest.fixture(scope="session")
def tandem_nodes():
    """Two-node tandem: mu = (1, 2), node 1 -> node 2 -> exit."""
    return [ServiceNode(ServiceLaw.exponential(1.0), [0.0, 1.0, 0.0]),
            ServiceNode(ServiceLaw.exponential(2.0), [0.0, 0.0, 1.0])]


@pytest.fixture(scope="session")
def tandem_kernel(tandem_nodes):
    return build_markov_kernel(tandem_nodes, 2)


@pytest.fixture(scope="session")
def batch_tandem_model(tandem_nodes):
    """The sinusoidal-arrival Poisson-batch tandem used across tests."""
    return NetworkModel(
        J=2,
        arrival=ArrivalProcess.sinusoidal(1.0, 0.5, 1.0),
        batch=BatchLaw.iid_assignment(UnivariateLaw.poisson(2.0), [1.0, 0.0]),
        nodes=[ServiceNode(ServiceLaw.exponential(1.0), [0.0, 1.0, 0.0]),
               ServiceNode(ServiceLaw.exponential(2.0), [0.0, 0.0, 1.0])])


def brute_force_iid_compound(law, qvec, i, n_top):
    """Independent oracle: P(C = i) by direct compounding of the batch size
    with multinomial placement, truncated at n_top."""
    import math
    qvec = np.asarray(qvec, dtype=float)
    i = tuple(int(v) for v in i)
    m = sum(i)
    leave = 1.0 - float(qvec.sum())
    total = 0.0
    for n in range(max(m, 0), n_top + 1):
        p_n = float(law.pmf(n))
        if p_n == 0.0:
            continue
        coeff = math.factorial(n) / math.factorial(n - m)
        for ik in i:
            coeff /= math.factorial(ik)
        placement = coeff * float(np.prod(qvec ** np.array(i)))
        if n > m:
            if leave <= 0.0:
                continue
            placement *= leave ** (n - m)
        total += p_n * placement
    return total
