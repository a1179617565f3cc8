#ifndef CLF_RL_H
#define CLF_RL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * CLF bundle: per-output CARE blocks and reward normalizers.
 */
typedef struct ClfBundle ClfBundle;

typedef struct ClfEnv ClfEnv;

typedef struct ClfGaitLibrary ClfGaitLibrary;

/**
 * Deterministic (mean) policy restored from a checkpoint.
 */
typedef struct ClfPolicy ClfPolicy;

typedef int32_t ClfStatus;

#define CLF_OK 0

#define CLF_NULL_POINTER 1

#define CLF_INVALID_ARGUMENT 2

#define CLF_DIMENSION_MISMATCH 3

#define CLF_IO_ERROR 4

#define CLF_PARSE_ERROR 5

#define CLF_NUMERICAL_ERROR 6

#define CLF_BUFFER_TOO_SMALL 7

#define CLF_PANIC 99

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap` bytes. Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t clf_last_error_message(char *buf, size_t cap);

/**
 * Closed-form 2×2 CARE solution, written row-major to `out_p[4]`.
 *
 * # Safety
 * `out_p` must point to 4 writable doubles.
 */
ClfStatus clf_care_2x2(double q_pos, double q_vel, double r, double *out_p);

/**
 * Builds a bundle from `n` per-output weights.
 *
 * # Safety
 * The weight arrays must hold `n` doubles; `out` must be writable.
 */
ClfStatus clf_bundle_new(const double *q_pos,
                         const double *q_vel,
                         const double *r,
                         size_t n,
                         double lambda,
                         double eta_max,
                         double eta_dot_max,
                         struct ClfBundle **out);

/**
 * # Safety
 * `bundle` must be null or a handle from `clf_bundle_new` not yet freed.
 */
void clf_bundle_free(struct ClfBundle *bundle);

/**
 * `V = Σ_i η_iᵀ P_i η_i` for errors `e_pos[n]`, `e_vel[n]`.
 *
 * # Safety
 * `bundle` must be a live handle; arrays must hold `n` doubles.
 */
ClfStatus clf_bundle_lyapunov(const struct ClfBundle *bundle,
                              const double *e_pos,
                              const double *e_vel,
                              size_t n,
                              double *out_v);

/**
 * Reward normalizers and the certified decay rate of the LQR closed loop.
 *
 * # Safety
 * `bundle` must be a live handle; outputs must be writable or null.
 */
ClfStatus clf_bundle_constants(const struct ClfBundle *bundle,
                               double *out_mu_max,
                               double *out_sigma_v,
                               double *out_sigma_vdot,
                               double *out_decay_rate);

/**
 * `w · tanh(−(V̇ + λV))`
 *
 * # Safety
 * `bundle` must be a live handle; `out_r` writable.
 */
ClfStatus clf_reward_decay_tanh(const struct ClfBundle *bundle,
                                double v,
                                double vdot,
                                double w,
                                double *out_r);

/**
 * H-LIP period-one orbit: pre-impact state `(p*, v*)` and step length `u*`.
 *
 * # Safety
 * Outputs must be writable.
 */
ClfStatus clf_hlip_fixed_point(double com_height,
                               double gravity,
                               double t_ssp,
                               double t_dsp,
                               double v_desired,
                               double *out_p,
                               double *out_v,
                               double *out_u);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
ClfStatus clf_gait_library_load(const char *path, struct ClfGaitLibrary **out);

/**
 * # Safety
 * `lib` must be null or a live handle.
 */
void clf_gait_library_free(struct ClfGaitLibrary *lib);

/**
 * Number of entries and stacked output dimension.
 *
 * # Safety
 * `lib` must be a live handle; outputs writable or null.
 */
ClfStatus clf_gait_library_info(const struct ClfGaitLibrary *lib,
                                size_t *out_entries,
                                size_t *out_output_dim);

/**
 * Reference of the entry nearest `v_desired` at time `t`; step 0 has odd
 * stance parity when `odd_start` is nonzero.
 *
 * # Safety
 * `lib` must be a live handle; `y` and `ydot` must hold `cap` doubles.
 */
ClfStatus clf_gait_library_reference(const struct ClfGaitLibrary *lib,
                                     double v_desired,
                                     double t,
                                     int32_t odd_start,
                                     double *y,
                                     double *ydot,
                                     size_t cap,
                                     size_t *out_len);

/**
 * Environment from an experiment config in TOML (empty string for defaults).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out` writable.
 */
ClfStatus clf_env_new(const char *config_toml, struct ClfEnv **out);

/**
 * # Safety
 * `env` must be null or a live handle.
 */
void clf_env_free(struct ClfEnv *env);

/**
 * # Safety
 * `env` must be a live handle; outputs writable or null.
 */
ClfStatus clf_env_dims(const struct ClfEnv *env,
                       size_t *out_obs,
                       size_t *out_priv,
                       size_t *out_action);

/**
 * Starts an episode and writes the policy observation.
 *
 * # Safety
 * `env` must be a live handle; `obs` must hold `cap` doubles.
 */
ClfStatus clf_env_reset(struct ClfEnv *env,
                        uint64_t seed,
                        double command,
                        double *obs,
                        size_t cap,
                        size_t *out_len);

/**
 * Advances one control tick. `out_done` is set to 1 when the episode ended.
 *
 * # Safety
 * `env` must be a live handle; `action` must hold `action_len` doubles and
 * `obs` `cap` doubles; scalar outputs writable or null.
 */
ClfStatus clf_env_step(struct ClfEnv *env,
                       const double *action,
                       size_t action_len,
                       double *obs,
                       size_t cap,
                       double *out_reward,
                       double *out_lyapunov,
                       int32_t *out_done);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
ClfStatus clf_policy_load(const char *path, struct ClfPolicy **out);

/**
 * # Safety
 * `policy` must be null or a live handle.
 */
void clf_policy_free(struct ClfPolicy *policy);

/**
 * Mean action for an observation.
 *
 * # Safety
 * `policy` must be a live handle; `obs` must hold `obs_len` doubles and
 * `action` `cap` doubles.
 */
ClfStatus clf_policy_act(const struct ClfPolicy *policy,
                         const double *obs,
                         size_t obs_len,
                         double *action,
                         size_t cap,
                         size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLF_RL_H */
