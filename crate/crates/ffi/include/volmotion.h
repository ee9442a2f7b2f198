#ifndef VOLMOTION_H
#define VOLMOTION_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code returned by every fallible call.
 */
typedef enum VmStatus {
  VM_OK = 0,
  /**
   * Invalid configuration or argument value.
   */
  VM_ERR_INVALID = 1,
  /**
   * Numerical failure (divergence, non-finite values).
   */
  VM_ERR_NUMERICAL = 2,
  /**
   * File or serialization error.
   */
  VM_ERR_IO = 3,
  /**
   * A required pointer argument was null.
   */
  VM_ERR_NULL_ARG = 4,
  /**
   * Unexpected internal failure.
   */
  VM_ERR_INTERNAL = 5,
} VmStatus;

/**
 * Opaque 3D displacement vector field.
 */
typedef struct VmField VmField;

/**
 * Opaque online RNN predictor state.
 */
typedef struct VmRnn VmRnn;

/**
 * Opaque 3D scalar volume.
 */
typedef struct VmVolume VmVolume;

/**
 * Optical-flow settings mirrored across the boundary.
 */
typedef struct VmFlowParams {
  double sigma_init;
  double sigma_sub;
  double sigma_lk;
  uintptr_t n_layers;
  uintptr_t n_iter;
  /**
   * Least-squares window half-width in voxels; 0 selects the default.
   */
  uintptr_t lk_window_h;
  double tensor_epsilon;
} VmFlowParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vm_last_error(void);

/**
 * Creates a volume from a row-major, x-fastest buffer of
 * `dims[0]*dims[1]*dims[2]` doubles. Copies the data.
 */
enum VmStatus vm_volume_new(const uintptr_t *dims,
                            const double *spacing,
                            const double *data,
                            struct VmVolume **out);

/**
 * Loads a volume from a JSON header path (see the file-format notes in
 * the library documentation).
 */
enum VmStatus vm_volume_load(const char *path, struct VmVolume **out);

/**
 * Saves a volume as a JSON header plus 32-bit float payload.
 */
enum VmStatus vm_volume_save(const struct VmVolume *vol, const char *path);

/**
 * Writes the volume dimensions into `dims[3]`.
 */
enum VmStatus vm_volume_dims(const struct VmVolume *vol, uintptr_t *dims);

/**
 * Copies the voxel data into `data`, which must hold
 * `dims[0]*dims[1]*dims[2]` doubles.
 */
enum VmStatus vm_volume_data(const struct VmVolume *vol, double *data);

void vm_volume_free(struct VmVolume *vol);

/**
 * Registers `moving` onto `fixed` and returns the displacement field.
 */
enum VmStatus vm_register(const struct VmVolume *fixed,
                          const struct VmVolume *moving,
                          const struct VmFlowParams *params,
                          struct VmField **out);

/**
 * Writes the displacement at voxel (x, y, z) into `u[3]`, voxel units.
 */
enum VmStatus vm_field_at(const struct VmField *field,
                          uintptr_t x,
                          uintptr_t y,
                          uintptr_t z,
                          double *u);

void vm_field_free(struct VmField *field);

/**
 * Warps `vol` forward along `field` with a windowed Gaussian kernel of
 * width `sigma_w` and cutoff radius `h`; uncovered voxels receive
 * `fill_value`.
 */
enum VmStatus vm_warp(const struct VmVolume *vol,
                      const struct VmField *field,
                      double sigma_w,
                      uintptr_t h,
                      double fill_value,
                      struct VmVolume **out);

/**
 * Creates an online predictor for `r` markers with signal history
 * length `l` and `q` hidden units.
 */
enum VmStatus vm_rnn_new(uintptr_t l,
                         uintptr_t r,
                         uintptr_t q,
                         double eta,
                         double theta,
                         double sigma_init,
                         uint64_t seed,
                         struct VmRnn **out);

/**
 * Input vector length expected by `vm_rnn_step` (bias term included).
 */
uintptr_t vm_rnn_input_len(const struct VmRnn *rnn);

/**
 * Output vector length produced by `vm_rnn_step`.
 */
uintptr_t vm_rnn_output_len(const struct VmRnn *rnn);

/**
 * Performs one online step: emits the prediction for the current input
 * into `y`, then updates the weights against the target `d`.
 */
enum VmStatus vm_rnn_step(struct VmRnn *rnn, const double *u, const double *d, double *y);

void vm_rnn_free(struct VmRnn *rnn);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLMOTION_H */
