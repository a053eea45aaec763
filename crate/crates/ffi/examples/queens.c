/* Counts the 6-queens solutions through the C interface. */
#include <stdio.h>
#include "orsplit.h"

static const char *PROGRAM =
    ":- parallel sel/3.\n"
    "queens(N, Qs) :- range(1, N, Ns), place(Ns, [], Qs).\n"
    "place([], Qs, Qs).\n"
    "place(Ns, Safe, Qs) :- sel(Q, Ns, Rest), safe(Q, 1, Safe), place(Rest, [Q|Safe], Qs).\n"
    "sel(X, [X|T], T).\n"
    "sel(X, [H|T], [H|R]) :- sel(X, T, R).\n"
    "safe(_, _, []).\n"
    "safe(Q, D, [Q1|Qs]) :- Q =\\= Q1 + D, Q =\\= Q1 - D, D1 is D + 1, safe(Q, D1, Qs).\n"
    "range(N, N, [N]).\n"
    "range(M, N, [M|Ns]) :- M < N, M1 is M + 1, range(M1, N, Ns).\n";

int main(void) {
    OrsplitJob *job = NULL;
    if (orsplit_job_new(PROGRAM, "queens(6, Qs)", &job) != ORSPLIT_STATUS_OK) {
        fprintf(stderr, "%s\n", orsplit_last_error());
        return 2;
    }
    OrsplitConfig config = orsplit_config_default();
    config.agents = 4;
    config.policy = ORSPLIT_POLICY_RANDOM_RR;
    OrsplitReport *report = NULL;
    if (orsplit_run(job, &config, &report) != ORSPLIT_STATUS_OK) {
        fprintf(stderr, "%s\n", orsplit_last_error());
        orsplit_job_free(job);
        return 2;
    }
    printf("%zu solutions\n", orsplit_report_solution_count(report));
    char *first = NULL;
    if (orsplit_report_solution(report, 0, &first) == ORSPLIT_STATUS_OK) {
        printf("%s\n", first);
        orsplit_string_free(first);
    }
    orsplit_report_free(report);
    orsplit_job_free(job);
    return 0;
}
