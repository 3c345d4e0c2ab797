#ifndef AMT_H
#define AMT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bits reported by `amt_model_components`.
 */
#define AMT_COMPONENT_RECOGNIZER 1

#define AMT_COMPONENT_TRANSCRIBER 2

#define AMT_COMPONENT_SEPARATOR 4

/**
 * Default threshold on recognizer probabilities.
 */
#define AMT_DEFAULT_THRESHOLD 0.5

/**
 * Result of every fallible call.
 */
typedef enum {
  AMT_STATUS_OK = 0,
  /**
   * Invalid argument or input outside an operation's domain.
   */
  AMT_STATUS_DOMAIN = 1,
  /**
   * File could not be read or written, or its contents are malformed.
   */
  AMT_STATUS_IO = 2,
  /**
   * A required pointer argument was null.
   */
  AMT_STATUS_NULL = 3,
  /**
   * Internal failure; the handle involved should be discarded.
   */
  AMT_STATUS_PANIC = 4,
} AmtStatus;

/**
 * A loaded checkpoint.
 */
typedef struct AmtModel AmtModel;

/**
 * Notes produced by `amt_transcribe`, sorted by instrument then onset.
 */
typedef struct AmtNotes AmtNotes;

/**
 * One transcribed note.
 */
typedef struct {
  /**
   * Instrument class index in `[0, amt_num_classes())`.
   */
  uint32_t instrument;
  /**
   * MIDI pitch in `[21, 108]`.
   */
  uint32_t pitch;
  double onset_s;
  double offset_s;
} AmtNote;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *amt_version(void);

/**
 * Message for the last failed call on this thread (empty after a success).
 * Valid until the next call into the library on this thread.
 */
const char *amt_last_error(void);

/**
 * Number of instrument classes (39).
 */
uint32_t amt_num_classes(void);

/**
 * Static name of an instrument class, or null when out of range.
 */
const char *amt_instrument_name(uint32_t index);

/**
 * Load a checkpoint written by `amt train-ir` or `amt train-amt`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
AmtStatus amt_model_load(const char *path, AmtModel **out);

/**
 * Release a model; null is ignored.
 *
 * # Safety
 * `model` must come from `amt_model_load` and not be used afterwards.
 */
void amt_model_free(AmtModel *model);

/**
 * Bitmask of `AMT_COMPONENT_*` values present in the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
AmtStatus amt_model_components(const AmtModel *model, uint32_t *out);

/**
 * Per-class presence probabilities for a recording.
 *
 * # Safety
 * `samples` must hold `len` floats; `probs` must have room for
 * `probs_len >= amt_num_classes()` doubles.
 */
AmtStatus amt_recognize(const AmtModel *model,
                        const float *samples,
                        size_t len,
                        uint32_t sample_rate,
                        double *probs,
                        size_t probs_len);

/**
 * Transcribe a recording for the given instrument classes. With
 * `n_conditions == 0` the classes are predicted by the model's recognizer
 * at `AMT_DEFAULT_THRESHOLD`.
 *
 * # Safety
 * `samples` must hold `len` floats, `conditions` must hold `n_conditions`
 * values (it may be null when `n_conditions == 0`), `out` must be valid.
 */
AmtStatus amt_transcribe(const AmtModel *model,
                         const float *samples,
                         size_t len,
                         uint32_t sample_rate,
                         const uint32_t *conditions,
                         size_t n_conditions,
                         double onset_threshold,
                         double frame_threshold,
                         AmtNotes **out);

/**
 * Number of notes in a list (0 for null).
 *
 * # Safety
 * `notes` must be null or a live handle.
 */
size_t amt_notes_len(const AmtNotes *notes);

/**
 * Copy note `index` into `out`.
 *
 * # Safety
 * `notes` must be a live handle and `out` a valid pointer.
 */
AmtStatus amt_notes_get(const AmtNotes *notes, size_t index, AmtNote *out);

/**
 * Write the notes as a Standard MIDI File, one track per instrument.
 *
 * # Safety
 * `notes` must be a live handle and `path` a NUL-terminated string.
 */
AmtStatus amt_notes_write_midi(const AmtNotes *notes, const char *path);

/**
 * Release a note list; null is ignored.
 *
 * # Safety
 * `notes` must come from `amt_transcribe` and not be used afterwards.
 */
void amt_notes_free(AmtNotes *notes);

/**
 * Separate one instrument. The output has the input's length and sample
 * rate. The separator is conditioned the way it was trained (transcriber
 * posteriors or no roll); models trained on ground-truth rolls are
 * rejected.
 *
 * # Safety
 * `samples` must hold `len` floats and `out` must have room for `out_len`
 * floats.
 */
AmtStatus amt_separate(const AmtModel *model,
                       const float *samples,
                       size_t len,
                       uint32_t sample_rate,
                       uint32_t instrument_index,
                       float *out,
                       size_t out_len);

/**
 * Source-to-distortion ratio in dB (capped at 100).
 *
 * # Safety
 * `reference` and `estimate` must each hold `len` floats; `out` must be valid.
 */
AmtStatus amt_sdr(const float *reference, const float *estimate, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMT_H */
