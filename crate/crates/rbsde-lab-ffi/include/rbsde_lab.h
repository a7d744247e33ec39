/* C interface for the rbsde-lab solvers.
 *
 * Scenarios are described by the same TOML format the command-line tool
 * reads. Solving happens in exact rational arithmetic; values are exposed
 * as doubles. Every fallible call returns a status code, and the message
 * for the most recent failure on the current thread is available through
 * rbsde_last_error().
 */

#ifndef RBSDE_LAB_H
#define RBSDE_LAB_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. */
#define RBSDE_OK 0         /* success */
#define RBSDE_ERR_NULL 1   /* a required pointer argument was null */
#define RBSDE_ERR_PARSE 2  /* scenario text failed to parse or validate */
#define RBSDE_ERR_MODEL 3  /* model or process shape is invalid */
#define RBSDE_ERR_SOLVE 4  /* the solver rejected the inputs */
#define RBSDE_ERR_VERIFY 5 /* a structural residual is nonzero */
#define RBSDE_ERR_RANGE 6  /* node address out of range */
#define RBSDE_ERR_PANIC 7  /* internal failure */

/* Opaque handles. */
typedef struct RbsdeScenario RbsdeScenario;
typedef struct RbsdeSolution RbsdeSolution;

/* Message for the most recent failure on the current thread. The pointer
 * stays valid until the next failing call on the same thread. Never null. */
const char *rbsde_last_error(void);

/* Parses a TOML scenario and realizes its model. On success writes a new
 * handle to `out`; release it with rbsde_scenario_free(). */
int rbsde_scenario_parse(const char *toml, RbsdeScenario **out);

/* Releases a scenario handle. Null is ignored. */
void rbsde_scenario_free(RbsdeScenario *sc);

/* Number of nodes in the realized tree, or 0 for a null handle. */
size_t rbsde_scenario_num_nodes(const RbsdeScenario *sc);

/* Number of time levels (horizon + 1), or 0 for a null handle. */
size_t rbsde_scenario_num_levels(const RbsdeScenario *sc);

/* Solves the scenario's equation exactly. The solver is chosen by which
 * barriers are present: two-sided, one-sided or unreflected. On success
 * writes a new handle to `out`; release it with rbsde_solution_free(). */
int rbsde_solve(const RbsdeScenario *sc, RbsdeSolution **out);

/* Releases a solution handle. Null is ignored. */
void rbsde_solution_free(RbsdeSolution *sol);

/* Writes the root value Y_0 to `out`. */
int rbsde_solution_y0(const RbsdeSolution *sol, double *out);

/* Writes the value Y at node (level, index) to `out`. Nodes are addressed
 * by time level and left-to-right position within that level. */
int rbsde_solution_value(const RbsdeSolution *sol, size_t level, size_t index,
                         double *out);

/* Re-verifies the solution against the scenario at zero tolerance.
 * Returns RBSDE_OK when every structural identity holds exactly. */
int rbsde_solution_verify(const RbsdeSolution *sol);

#ifdef __cplusplus
}
#endif

#endif /* RBSDE_LAB_H */
