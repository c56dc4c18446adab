#ifndef FEDSCDG_H
#define FEDSCDG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FgsStatus {
  FGS_STATUS_OK = 0,
  FGS_STATUS_NULL_POINTER = 1,
  FGS_STATUS_INVALID_ARGUMENT = 2,
  FGS_STATUS_PARSE = 3,
  FGS_STATUS_CRYPTO = 4,
  FGS_STATUS_BUFFER_TOO_SMALL = 5,
  FGS_STATUS_OVERFLOW = 6,
  FGS_STATUS_PANIC = 7,
} FgsStatus;

/*
 Homomorphic ciphertext of one or more coordinates.
 */
typedef struct FgsCiphertext FgsCiphertext;

/*
 Homomorphic key pair.
 */
typedef struct FgsHeKeyPair FgsHeKeyPair;

/*
 Extracted system call dependency graph.
 */
typedef struct FgsScdg FgsScdg;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread, NUL-terminated, into
 `buf`. Returns the message length without the terminator.

 # Safety
 `buf` must point to `cap` writable bytes or be null with `cap == 0`.
 */
uintptr_t fgs_last_error(char *buf, uintptr_t cap);

/*
 Builds a graph from trace text (`call ...` lines, traces separated by
 `end`).

 # Safety
 `traces` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FgsStatus fgs_scdg_from_traces(const char *traces, struct FgsScdg **out);

/*
 Explores a program model with strategy 0 = BFS, 1 = CBFS, 2 = CDFS and
 builds the graph of the recorded traces.

 # Safety
 `model` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FgsStatus fgs_extract(const char *model,
                           uint32_t strategy,
                           uintptr_t max_states,
                           uintptr_t max_trace_length,
                           uintptr_t max_traces,
                           struct FgsScdg **out);

/*
 # Safety
 `g` must be a handle from this library or null.
 */
uintptr_t fgs_scdg_node_count(const struct FgsScdg *g);

/*
 # Safety
 `g` must be a handle from this library or null.
 */
uintptr_t fgs_scdg_edge_count(const struct FgsScdg *g);

/*
 Writes the text form (not NUL-terminated). `written` receives the full
 size even when the buffer is too small.

 # Safety
 `g` must be a valid handle, `buf` must hold `cap` bytes.
 */
enum FgsStatus fgs_scdg_serialize(const struct FgsScdg *g,
                                  uint8_t *buf,
                                  uintptr_t cap,
                                  uintptr_t *written);

/*
 # Safety
 `g` must be a handle from this library, freed at most once, or null.
 */
void fgs_scdg_free(struct FgsScdg *g);

/*
 Generates a key pair with a `security_bits`-bit modulus from `seed`.

 # Safety
 `out` must be a valid pointer.
 */
enum FgsStatus fgs_he_keygen(uint64_t security_bits, uint64_t seed, struct FgsHeKeyPair **out);

/*
 # Safety
 `kp` must be a handle from this library, freed at most once, or null.
 */
void fgs_he_keypair_free(struct FgsHeKeyPair *kp);

/*
 Encrypts the integer `m`.

 # Safety
 `kp` must be a valid handle and `out` a valid pointer.
 */
enum FgsStatus fgs_he_encrypt(const struct FgsHeKeyPair *kp,
                              int64_t m,
                              uint64_t seed,
                              struct FgsCiphertext **out);

/*
 Decrypts to a signed integer; [`FgsStatus::Overflow`] if it does not fit.

 # Safety
 `kp` and `ct` must be valid handles and `out` a valid pointer.
 */
enum FgsStatus fgs_he_decrypt(const struct FgsHeKeyPair *kp,
                              const struct FgsCiphertext *ct,
                              int64_t *out);

/*
 `Enc(a + b)` from `Enc(a)` and `Enc(b)`.

 # Safety
 All handles must be valid and `out` a valid pointer.
 */
enum FgsStatus fgs_he_add(const struct FgsHeKeyPair *kp,
                          const struct FgsCiphertext *a,
                          const struct FgsCiphertext *b,
                          struct FgsCiphertext **out);

/*
 `Enc(k * a)` from `Enc(a)`.

 # Safety
 All handles must be valid and `out` a valid pointer.
 */
enum FgsStatus fgs_he_scalar_mul(const struct FgsHeKeyPair *kp,
                                 const struct FgsCiphertext *a,
                                 int64_t k,
                                 struct FgsCiphertext **out);

/*
 # Safety
 `ct` must be a handle from this library, freed at most once, or null.
 */
void fgs_ciphertext_free(struct FgsCiphertext *ct);

/*
 `round(r * 2^f)` with ties to even.

 # Safety
 `out` must be a valid pointer.
 */
enum FgsStatus fgs_fixed_encode(double r, uint8_t f, int64_t *out);

double fgs_fixed_decode(int64_t i, uint8_t f);

/*
 Encodes one frame; `msg_type` is the wire code (1..=9).

 # Safety
 `payload` must hold `payload_len` bytes (or be null when it is 0) and
 `buf` must hold `cap` bytes.
 */
enum FgsStatus fgs_frame_encode(uint8_t msg_type,
                                uint32_t round,
                                uint16_t sender,
                                const uint8_t *payload,
                                uintptr_t payload_len,
                                uint8_t *buf,
                                uintptr_t cap,
                                uintptr_t *written);

/*
 Fraction of equal labels.

 # Safety
 `y` and `y_hat` must each hold `n` values.
 */
enum FgsStatus fgs_accuracy(const uintptr_t *y, const uintptr_t *y_hat, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSCDG_H */
