#ifndef ECHOMSA_H
#define ECHOMSA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum EchoStatus {
  ECHO_STATUS_OK = 0,
  ECHO_STATUS_NULL_POINTER = 1,
  ECHO_STATUS_INVALID_ARGUMENT = 2,
  ECHO_STATUS_DIMENSION = 3,
  ECHO_STATUS_CONTRACT = 4,
  ECHO_STATUS_NUMERIC = 5,
  ECHO_STATUS_CONFIG = 6,
  ECHO_STATUS_FORMAT = 7,
  ECHO_STATUS_IO = 8,
  ECHO_STATUS_BUFFER_TOO_SMALL = 9,
  ECHO_STATUS_PANIC = 10,
} EchoStatus;

// Opaque model handle.
typedef struct EchoModel EchoModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a
// successful one. Valid until the next call into this library.
const char *echomsa_last_error(void);

// Library version as a static NUL-terminated string.
const char *echomsa_version(void);

// Builds a randomly initialized model from run-config TOML text (`NULL`
// or empty for defaults) and a seed.
enum EchoStatus echomsa_model_new(const char *config_toml, uint64_t seed, struct EchoModel **out);

// Loads a checkpoint file.
enum EchoStatus echomsa_model_load(const char *path, struct EchoModel **out);

enum EchoStatus echomsa_model_save(const struct EchoModel *model, const char *path);

// Releases a handle; NULL is ignored.
void echomsa_model_free(struct EchoModel *model);

// Output symbols including the blank (index 0); 0 for a NULL handle.
size_t echomsa_model_vocab_size(const struct EchoModel *model);

// Samples per encoder frame; 0 for a NULL handle.
size_t echomsa_model_frame_len(const struct EchoModel *model);

// Trainable scalar count; 0 for a NULL handle.
size_t echomsa_model_num_params(const struct EchoModel *model);

// Frames produced for a waveform of `num_samples` samples.
size_t echomsa_model_num_frames(const struct EchoModel *model, size_t num_samples);

// Runs the model on `waveform[num_samples]` and writes log-probabilities
// `[frames, vocab]` into `out[out_len]`. `frames_out` receives the frame
// count even when the buffer is too small.
enum EchoStatus echomsa_model_forward(const struct EchoModel *model,
                                      const double *waveform,
                                      size_t num_samples,
                                      double *out,
                                      size_t out_len,
                                      size_t *frames_out);

// Best-path decode of `log_probs[frames * vocab]`. Writes at most
// `capacity` symbols to `labels_out` and the full length to `len_out`.
enum EchoStatus echomsa_greedy_decode(const double *log_probs,
                                      size_t frames,
                                      size_t vocab,
                                      size_t *labels_out,
                                      size_t capacity,
                                      size_t *len_out);

// CTC negative log-likelihood of `labels[num_labels]` (no blanks) under
// `log_probs[frames * vocab]`. Infeasible targets give `+inf`.
enum EchoStatus echomsa_ctc_loss(const double *log_probs,
                                 size_t frames,
                                 size_t vocab,
                                 const size_t *labels,
                                 size_t num_labels,
                                 double *loss_out);

// Learning rate at `step` for the default three-stage schedule spread
// over `total_steps`.
enum EchoStatus echomsa_lr_at(size_t step, size_t total_steps, double *rate_out);

// Learning rate at `step` for explicit per-stage base `rates` and
// exclusive end `boundaries`, both of length `num_stages`.
enum EchoStatus echomsa_lr_at_stages(const double *rates,
                                     const size_t *boundaries,
                                     size_t num_stages,
                                     size_t step,
                                     double *rate_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHOMSA_H */
