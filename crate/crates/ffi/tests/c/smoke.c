#include <stdio.h>
#include <string.h>
#include "qac.h"

#define CHECK(expr)                                                        \
    do {                                                                   \
        QacStatus s_ = (expr);                                             \
        if (s_ != QAC_STATUS_OK) {                                         \
            const char *m_ = qac_last_error_message();                     \
            fprintf(stderr, "%s failed: %s (%s)\n", #expr,                 \
                    qac_status_name(s_), m_ ? m_ : "");                    \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    uint64_t m = 0;
    CHECK(qac_choose_m(2, 0.15, &m));
    if (m != 34) {
        fprintf(stderr, "choose_m gave %llu\n", (unsigned long long)m);
        return 1;
    }

    double delta = 0.0;
    CHECK(qac_solve_delta(2, 3, &delta));
    QacCircuit *grid = NULL;
    CHECK(qac_build_depth2_nekomata(2, 3, delta, &grid));

    size_t size = 0, depth = 0, targets = 0;
    CHECK(qac_circuit_size(grid, &size));
    CHECK(qac_circuit_depth(grid, &depth));
    CHECK(qac_circuit_num_targets(grid, &targets));

    double fid = 0.0, p0 = 0.0;
    CHECK(qac_best_nekomata_fidelity(grid, &fid, &p0, NULL));

    uint8_t bits[2 * 100];
    CHECK(qac_sample_targets(grid, 100, 7, bits, sizeof bits));

    char *json = NULL;
    CHECK(qac_circuit_to_json(grid, &json));
    QacCircuit *back = NULL;
    CHECK(qac_circuit_from_json(json, &back));
    qac_string_free(json);

    QacCircuit *bad = NULL;
    QacStatus s = qac_circuit_from_json("{", &bad);
    if (s != QAC_STATUS_PARSE || qac_last_error_message() == NULL) {
        fprintf(stderr, "expected a parse error\n");
        return 1;
    }

    printf("size=%zu depth=%zu targets=%zu p0=%.6f fidelity=%.6f\n", size, depth, targets, p0, fid);
    qac_circuit_free(back);
    qac_circuit_free(grid);
    return 0;
}
