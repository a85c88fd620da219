#ifndef QAC_H
#define QAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every call.
 */
typedef enum QacStatus {
  QAC_STATUS_OK = 0,
  QAC_STATUS_NULL_POINTER = 1,
  QAC_STATUS_INVALID_UTF8 = 2,
  QAC_STATUS_PARSE = 3,
  QAC_STATUS_INVALID_CIRCUIT = 4,
  QAC_STATUS_INVALID_PARAMETER = 5,
  QAC_STATUS_PRECONDITION = 6,
  QAC_STATUS_TOO_LARGE = 7,
  QAC_STATUS_UNSUPPORTED = 8,
  QAC_STATUS_IO = 9,
  QAC_STATUS_BUFFER_TOO_SMALL = 10,
  QAC_STATUS_PANIC = 11,
} QacStatus;

/**
 * Opaque circuit handle.
 */
typedef struct QacCircuit QacCircuit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL.
 * The pointer stays valid until the next call on the same thread.
 */
const char *qac_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *qac_status_name(enum QacStatus status);

/**
 * Library version as a static string.
 */
const char *qac_version(void);

/**
 * Parses and validates a circuit from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum QacStatus qac_circuit_from_json(const char *json, struct QacCircuit **out);

/**
 * Serializes a circuit. Free the string with `qac_string_free`.
 *
 * # Safety
 * `c` must be a live handle and `out` writable.
 */
enum QacStatus qac_circuit_to_json(const struct QacCircuit *c, char **out);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void qac_string_free(char *s);

/**
 * # Safety
 * `c` must come from this library or be NULL. It must not be used afterwards.
 */
void qac_circuit_free(struct QacCircuit *c);

/**
 * # Safety
 * `c` must be a live handle and `out` writable.
 */
enum QacStatus qac_circuit_num_qubits(const struct QacCircuit *c, size_t *out);

/**
 * Number of multi-qubit gates.
 *
 * # Safety
 * `c` must be a live handle and `out` writable.
 */
enum QacStatus qac_circuit_size(const struct QacCircuit *c, size_t *out);

/**
 * Number of layers holding a multi-qubit gate.
 *
 * # Safety
 * `c` must be a live handle and `out` writable.
 */
enum QacStatus qac_circuit_depth(const struct QacCircuit *c, size_t *out);

/**
 * # Safety
 * `c` must be a live handle and `out` writable.
 */
enum QacStatus qac_circuit_num_targets(const struct QacCircuit *c, size_t *out);

/**
 * Root of (1 - 2 delta^n)^(2M) = 1/2.
 *
 * # Safety
 * `out` must be writable.
 */
enum QacStatus qac_solve_delta(size_t n, uint64_t m, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum QacStatus qac_choose_m(size_t n, double epsilon, uint64_t *out);

/**
 * Depth-2 grid nekomata on n(M+1) qubits.
 *
 * # Safety
 * `out` must be writable.
 */
enum QacStatus qac_build_depth2_nekomata(size_t n,
                                         uint64_t m,
                                         double delta,
                                         struct QacCircuit **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum QacStatus qac_fanout_tree(size_t n, size_t m, struct QacCircuit **out);

/**
 * # Safety
 * `c` must be a live handle and `out` writable.
 */
enum QacStatus qac_normal_form(const struct QacCircuit *c, struct QacCircuit **out);

/**
 * Clean parity on n inputs from a constructor whose first n wires are the targets.
 *
 * # Safety
 * `nekomata` must be a live handle and `out` writable.
 */
enum QacStatus qac_parity_from_nekomata(const struct QacCircuit *nekomata,
                                        size_t n,
                                        struct QacCircuit **out);

/**
 * Best fidelity of C|0...0> with any nekomata on the circuit's targets, plus the
 * all-zeros and all-ones target probabilities. Any of the outputs may be NULL.
 *
 * # Safety
 * `c` must be a live handle; non-NULL outputs must be writable.
 */
enum QacStatus qac_best_nekomata_fidelity(const struct QacCircuit *c,
                                          double *fidelity,
                                          double *p_zeros,
                                          double *p_ones);

/**
 * Samples target bits of a mostly classical circuit on |0...0>.
 *
 * Writes `trials` rows of `num_targets` bytes (0 or 1) into `out`, row-major.
 * Draws match `qac sample` for the same seed.
 *
 * # Safety
 * `c` must be a live handle and `out` must hold `out_len` bytes.
 */
enum QacStatus qac_sample_targets(const struct QacCircuit *c,
                                  uint64_t trials,
                                  uint64_t seed,
                                  uint8_t *out,
                                  size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QAC_H */
