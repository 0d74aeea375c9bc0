# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Random draws go straight to the numpy bit
generators, in the same order as the pure-Python kernels."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.stdlib cimport malloc, free
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_beta

cnp.import_array()

cdef enum:
    EPSILON_GREEDY = 0
    THOMPSON = 1
    RANDOM = 2
    ORACLE = 3


cdef inline bitgen_t* _bitgen(object rng) except NULL:
    return <bitgen_t*> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t* bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef inline int _index(bitgen_t* bg, int k) noexcept nogil:
    cdef int i = <int>(_uniform(bg) * k)
    return i if i < k else k - 1


def push_gossip_batch(int n, int reps, object rng):
    from fabricsim._pykernels import gossip_round_cap
    cdef int cap = gossip_round_cap(n)
    counts_arr = np.full((reps, cap), n, dtype=np.int64)
    lengths_arr = np.empty(reps, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] counts = counts_arr
    cdef cnp.int64_t[::1] lengths = lengths_arr
    cdef char* informed = <char*> malloc(n)
    cdef int* senders = <int*> malloc(n * sizeof(int))
    if informed == NULL or senders == NULL:
        free(informed); free(senders)
        raise MemoryError()
    cdef bitgen_t* bg = _bitgen(rng)
    cdef int rep, t, i, count, n_send, target, longest = 1
    cdef bint overflow = False
    lock = rng.bit_generator.lock
    try:
        with lock, nogil:
            for rep in range(reps):
                for i in range(n):
                    informed[i] = 0
                informed[0] = 1
                count = 1
                t = 0
                counts[rep, 0] = 1
                while count < n:
                    t += 1
                    if t >= cap:
                        overflow = True
                        break
                    n_send = 0
                    for i in range(n):
                        if informed[i]:
                            senders[n_send] = i
                            n_send += 1
                    for i in range(n_send):
                        target = <int>(_uniform(bg) * n)
                        if target >= n:
                            target = n - 1
                        if not informed[target]:
                            informed[target] = 1
                            count += 1
                    counts[rep, t] = count
                if overflow:
                    break
                lengths[rep] = t + 1
                if t + 1 > longest:
                    longest = t + 1
    finally:
        free(informed)
        free(senders)
    if overflow:
        raise RuntimeError(f"push gossip on n={n} did not finish within {cap} rounds")
    return counts_arr[:, :longest], lengths_arr


cdef inline bint _consensus_round(bitgen_t* bg, int n, double p, int f_max) noexcept nogil:
    cdef int i, faults = 0
    for i in range(n):
        if _uniform(bg) < p:
            faults += 1
    return faults <= f_max


cdef inline bint _execute(bitgen_t* bg, int n, double p, int f_max, int rounds,
                          int c_endorse, int c_order, int max_retries, int* latency) noexcept nogil:
    cdef int a
    if not _consensus_round(bg, n, p, f_max):
        latency[0] = c_endorse
        return False
    for a in range(max_retries + 1):
        if _consensus_round(bg, n, p, f_max):
            latency[0] = c_endorse + c_order + (a + 1) * rounds
            return True
    latency[0] = c_endorse + c_order + (max_retries + 1) * rounds
    return False


def run_clients_arrays(
    int[::1] n_peers, double[::1] fault_prob, int[::1] f_max, int[::1] rounds,
    int c_endorse, int c_order, int max_retries,
    int[::1] policy, double[::1] epsilon, int[::1] fixed_arm, int[::1] oracle_arm,
    double[:, ::1] alpha, double[:, ::1] beta,
    int[::1] t_dwell, int[::1] t_train, double[::1] arrival_prob, int[::1] uniform_training,
    int[::1] capacity, list rngs,
):
    """Run every client to departure, slot-major.

    ``alpha``/``beta`` hold one posterior row per client and are updated in
    place.  ``oracle_arm`` is -2 without an oracle, -1 for an infeasible
    context.  An empty ``capacity`` disables queueing.
    """
    cdef int n_clients = policy.shape[0]
    cdef int k = n_peers.shape[0]
    cdef bint contention = capacity.shape[0] > 0
    cdef Py_ssize_t total = 0
    cdef int c, t, horizon = 0
    for c in range(n_clients):
        total += max(t_dwell[c] - t_train[c], 0)
        horizon = max(horizon, t_dwell[c])

    out = {
        "vehicle_id": np.empty(total, dtype=np.int64),
        "slot_submitted": np.empty(total, dtype=np.int64),
        "channel_id": np.empty(total, dtype=np.int64),
        "ec_success": np.empty(total, dtype=np.bool_),
        "latency_slots": np.empty(total, dtype=np.int64),
        "r_ld": np.empty(total, dtype=np.int64),
        "committed_within_dwell": np.empty(total, dtype=np.bool_),
        "reward": np.empty(total, dtype=np.int64),
        "oracle_reward": np.empty(total, dtype=np.int64),
        "regret": np.empty(total, dtype=np.int64),
        "queue_wait": np.empty(total, dtype=np.int64),
    }
    cdef cnp.int64_t[::1] o_vehicle = out["vehicle_id"]
    cdef cnp.int64_t[::1] o_slot = out["slot_submitted"]
    cdef cnp.int64_t[::1] o_channel = out["channel_id"]
    cdef cnp.npy_bool[::1] o_ec = out["ec_success"]
    cdef cnp.int64_t[::1] o_latency = out["latency_slots"]
    cdef cnp.int64_t[::1] o_rld = out["r_ld"]
    cdef cnp.npy_bool[::1] o_committed = out["committed_within_dwell"]
    cdef cnp.int64_t[::1] o_reward = out["reward"]
    cdef cnp.int64_t[::1] o_oracle = out["oracle_reward"]
    cdef cnp.int64_t[::1] o_regret = out["regret"]
    cdef cnp.int64_t[::1] o_wait = out["queue_wait"]

    cdef bitgen_t** bgs = <bitgen_t**> malloc(n_clients * sizeof(bitgen_t*))
    cdef double* theta = <double*> malloc(k * sizeof(double))
    cdef int* q_slot = <int*> malloc(k * sizeof(int))
    cdef int* q_used = <int*> malloc(k * sizeof(int))
    if bgs == NULL or theta == NULL or q_slot == NULL or q_used == NULL:
        free(bgs); free(theta); free(q_slot); free(q_used)
        raise MemoryError()

    locks = [g.bit_generator.lock for g in rngs]
    cdef Py_ssize_t n_rec = 0
    cdef int arm, lat, lat_star, wait, remaining, r, r_ld, r_star, i
    cdef bint ok, ok_star
    cdef double best, u
    cdef bitgen_t* bg
    acquired = []
    try:
        for c in range(n_clients):
            bgs[c] = _bitgen(rngs[c])
        for i in range(k):
            q_slot[i] = -1
            q_used[i] = 0
        for lk in locks:
            lk.acquire()
            acquired.append(lk)
        with nogil:
            for t in range(horizon):
                for c in range(n_clients):
                    if t >= t_dwell[c]:
                        continue
                    bg = bgs[c]
                    if t < t_train[c]:
                        if uniform_training[c]:
                            arm = _index(bg, k)
                        else:
                            arm = t % k
                        ok = _execute(bg, n_peers[arm], fault_prob[arm], f_max[arm], rounds[arm],
                                      c_endorse, c_order, max_retries, &lat)
                        if ok and lat <= t_dwell[c]:
                            alpha[c, arm] += 1.0
                        else:
                            beta[c, arm] += 1.0
                        continue
                    if arrival_prob[c] < 1.0:
                        if not (_uniform(bg) < arrival_prob[c]):
                            continue
                    # channel selection
                    if policy[c] == EPSILON_GREEDY:
                        if _uniform(bg) < epsilon[c]:
                            arm = _index(bg, k)
                        else:
                            arm = 0
                            best = alpha[c, 0] / (alpha[c, 0] + beta[c, 0])
                            for i in range(1, k):
                                u = alpha[c, i] / (alpha[c, i] + beta[c, i])
                                if u > best:
                                    best = u
                                    arm = i
                    elif policy[c] == THOMPSON:
                        for i in range(k):
                            theta[i] = random_beta(bg, alpha[c, i], beta[c, i])
                        arm = 0
                        best = theta[0]
                        for i in range(1, k):
                            if theta[i] > best:
                                best = theta[i]
                                arm = i
                    elif policy[c] == RANDOM:
                        arm = _index(bg, k)
                    else:
                        arm = fixed_arm[c]
                    wait = 0
                    if contention:
                        if q_slot[arm] < t:
                            q_slot[arm] = t
                            q_used[arm] = 0
                        if q_used[arm] >= capacity[arm]:
                            q_slot[arm] += 1
                            q_used[arm] = 0
                        q_used[arm] += 1
                        wait = q_slot[arm] - t
                    ok = _execute(bg, n_peers[arm], fault_prob[arm], f_max[arm], rounds[arm],
                                  c_endorse, c_order, max_retries, &lat)
                    lat = lat + wait
                    remaining = t_dwell[c] - t
                    r_ld = lat <= remaining
                    r = ok and r_ld
                    if r:
                        alpha[c, arm] += 1.0
                    else:
                        beta[c, arm] += 1.0
                    r_star = -1
                    if oracle_arm[c] == -1:
                        r_star = 0
                    elif oracle_arm[c] == arm:
                        r_star = r
                    elif oracle_arm[c] >= 0:
                        i = oracle_arm[c]
                        ok_star = _execute(bg, n_peers[i], fault_prob[i], f_max[i], rounds[i],
                                           c_endorse, c_order, max_retries, &lat_star)
                        r_star = ok_star and lat_star <= remaining
                    o_vehicle[n_rec] = c
                    o_slot[n_rec] = t
                    o_channel[n_rec] = arm
                    o_ec[n_rec] = ok
                    o_latency[n_rec] = lat
                    o_rld[n_rec] = r_ld
                    o_committed[n_rec] = r
                    o_reward[n_rec] = r
                    o_oracle[n_rec] = r_star
                    o_regret[n_rec] = -1 if r_star < 0 else (r - r_star if r >= r_star else r_star - r)
                    o_wait[n_rec] = wait
                    n_rec += 1
    finally:
        for lk in acquired:
            lk.release()
        free(bgs); free(theta); free(q_slot); free(q_used)
    return {name: arr[:n_rec] for name, arr in out.items()}
