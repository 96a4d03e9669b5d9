/* C interface to the engagement-process lab (crates/ffi).
 *
 * Handles returned through out-params are owned by the caller and released
 * with the matching _free. Fallible calls return a status code; on failure
 * the out-params are left untouched and ep_last_error_message() carries a
 * human-readable reason until the next call on the same thread.
 *
 * Hand-maintained mirror of crates/ffi/src/lib.rs; the Rust smoke tests
 * check the two stay in sync.
 */

#ifndef EP_LAB_H
#define EP_LAB_H

#include <stddef.h>
#include <stdint.h>

#define EP_OK 0
/* Null pointer, bad index, wrong buffer length, or a belief that fails
 * validation. */
#define EP_ERR_ARGUMENT 1
/* Unreadable file or malformed table text. */
#define EP_ERR_PARSE 2
/* Well-formed inputs the math refused: impossible observation, node budget
 * exceeded, no admissible set. */
#define EP_ERR_DOMAIN 3

/* Finite model plus the initial belief its table file declared, if any. */
typedef struct EpModel EpModel;

/* Distribution over a model's states. */
typedef struct EpBelief EpBelief;

/* Learned state-key -> action-value table. */
typedef struct EpQTable EpQTable;

#ifdef __cplusplus
extern "C" {
#endif

/* Crate version as a static NUL-terminated string. */
const char *ep_version(void);

/* Message for the most recent failure on this thread, or NULL after a
 * success. The pointer stays valid until the next call on the same thread. */
const char *ep_last_error_message(void);

/* Parses model table text into a fresh handle. */
int32_t ep_model_parse(const char *text, EpModel **out);

/* Reads and parses a model table file. */
int32_t ep_model_load(const char *path, EpModel **out);

/* Releases a model handle. NULL is a no-op. */
void ep_model_free(EpModel *m);

/* Dimension accessors; each returns -1 for a NULL handle. */
int32_t ep_model_n_states(const EpModel *m);
int32_t ep_model_n_sets(const EpModel *m);
int32_t ep_model_n_obs(const EpModel *m);

/* Belief the model's table file declared with init: rows, uniform when the
 * file declared none. */
int32_t ep_model_initial_belief(const EpModel *m, EpBelief **out);

/* Uniform belief over the model's states. */
int32_t ep_belief_uniform(const EpModel *m, EpBelief **out);

/* Belief from an explicit probability vector. len must equal the model's
 * state count and the entries must be a distribution. */
int32_t ep_belief_from_probs(const EpModel *m, const double *probs, size_t len,
                             EpBelief **out);

/* Releases a belief handle. NULL is a no-op. */
void ep_belief_free(EpBelief *b);

/* Number of entries, or -1 for a NULL handle. */
int32_t ep_belief_len(const EpBelief *b);

/* Copies the belief's probabilities into buf, which holds cap doubles. */
int32_t ep_belief_probs(const EpBelief *b, double *buf, size_t cap);

/* One-step predictive belief after committing to intervention set set_index,
 * before any observation arrives. */
int32_t ep_belief_predict(const EpModel *m, const EpBelief *b,
                          size_t set_index, EpBelief **out);

/* Full update: predict under set_index, then condition on observing
 * observation set obs_index. */
int32_t ep_belief_update(const EpModel *m, const EpBelief *b,
                         size_t set_index, size_t obs_index, EpBelief **out);

/* Distribution over the next observation set given intervention set_index.
 * buf must hold at least the model's observation count. */
int32_t ep_obs_predictive(const EpModel *m, const EpBelief *b,
                          size_t set_index, double *buf, size_t cap);

/* Finite-horizon optimal value and greedy intervention set under the default
 * node budget. out_value and out_set may each be NULL to skip. */
int32_t ep_plan(const EpModel *m, const EpBelief *b, uint32_t horizon,
                double *out_value, size_t *out_set);

/* ep_plan with an explicit expectimax node budget. */
int32_t ep_plan_budgeted(const EpModel *m, const EpBelief *b,
                         uint32_t horizon, uint64_t node_budget,
                         double *out_value, size_t *out_set);

/* Reads and parses a serialized Q-table file. */
int32_t ep_qtable_load(const char *path, EpQTable **out);

/* Parses serialized Q-table text. */
int32_t ep_qtable_parse(const char *text, EpQTable **out);

/* Releases a Q-table handle. NULL is a no-op. */
void ep_qtable_free(EpQTable *t);

/* Number of actions, or -1 for a NULL handle. */
int32_t ep_qtable_n_actions(const EpQTable *t);

/* Learned value of action at the state key. Unseen keys read as zero. */
int32_t ep_qtable_value(const EpQTable *t, const uint16_t *key,
                        size_t key_len, size_t action, double *out);

/* Greedy action at the state key, all actions admissible; ties resolve to
 * the lowest index. Unseen keys read as all-zero rows. */
int32_t ep_qtable_greedy(const EpQTable *t, const uint16_t *key,
                         size_t key_len, size_t *out_action);

#ifdef __cplusplus
}
#endif

#endif /* EP_LAB_H */
