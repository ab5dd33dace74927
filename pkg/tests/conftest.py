import numpy as np
import pytest

from nfmb import element_positions
from nfmb.constants import C

# collected (nodeid, outcome) pairs for acceptance tests
_acceptance_results = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance_results.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome.upper()}")


def scalar_tensor_oracle(path, tx_array, rx_array, wf, velocity=0.0):
    """Independent brute-force recomputation of a per-path tensor.

    Loops over every (m, n, p, q) using only scalar geometry, bypassing the
    vectorized production code path.
    """
    tx_pos = element_positions(tx_array)
    rx_pos = element_positions(rx_array)
    tx_ref = tx_pos[tx_array.reference_index]
    rx_ref = rx_pos[rx_array.reference_index]
    M, N = len(tx_pos), len(rx_pos)
    P, Q = wf.n_subbands, wf.n_frames
    out = np.zeros((M * N, P * Q), dtype=complex)
    first_hop = path.hops[0]
    last_hop = path.hops[-1]
    for n in range(1, N + 1):
        d_rx_n = np.linalg.norm(last_hop - rx_pos[n - 1])
        for m in range(1, M + 1):
            d_tx_m = np.linalg.norm(first_hop - tx_pos[m - 1])
            tau_mn = (
                path.tau_ref
                + (d_rx_n - np.linalg.norm(last_hop - rx_ref)) / C
                + (d_tx_m - np.linalg.norm(first_hop - tx_ref)) / C
            )
            dalpha = path.tau_ref / tau_mn
            row = (n - 1) * M + m
            for q in range(1, Q + 1):
                for p in range(1, P + 1):
                    f_p = p * wf.f_s
                    if wf.narrowband_doppler:
                        f_d = -wf.f_c * velocity / C
                    else:
                        f_d = -(wf.f_c + f_p) * velocity / C
                    col = (q - 1) * P + p
                    out[row - 1, col - 1] = (
                        dalpha
                        * np.exp(-2j * np.pi * f_p * tau_mn)
                        * np.exp(2j * np.pi * f_d * q * wf.t_frame)
                    )
    return out


def plane_wave_tensor(path, tx_array, rx_array, wf):
    """Far-field comparison model: per-element delays linearized at the
    reference, SNS amplitude 1, orientations frozen at the reference."""
    tx_pos = element_positions(tx_array)
    rx_pos = element_positions(rx_array)
    off_tx = tx_pos - tx_pos[tx_array.reference_index]
    off_rx = rx_pos - rx_pos[rx_array.reference_index]
    dtau_tx = -(off_tx @ path.omega_tx) / C
    dtau_rx = -(off_rx @ path.omega_rx) / C
    tau = path.tau_ref + dtau_rx[:, None] + dtau_tx[None, :]  # (N, M)
    f_p = wf.subband_frequencies()
    phases = np.exp(-2j * np.pi * f_p[None, None, :] * tau[:, :, None])  # (N, M, P)
    M, N = len(tx_pos), len(rx_pos)
    entries = np.repeat(
        phases[:, :, None, :], wf.n_frames, axis=2
    )  # (N, M, Q, P)
    return entries.reshape(M * N, wf.n_subbands * wf.n_frames)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
