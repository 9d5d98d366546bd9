#include <math.h>
#include <stdio.h>
#include <string.h>

#include "regcheck.h"

int main(void) {
    enum { N = 120, D = 2 };
    static double x[N * D], y[N];
    unsigned long s = 12345;
    for (int i = 0; i < N; i++) {
        for (int j = 0; j < D; j++) {
            s = s * 6364136223846793005UL + 1442695040888963407UL;
            x[i * D + j] = ((double)(s >> 11) / 9007199254740992.0) * 2.0 - 1.0;
        }
        s = s * 6364136223846793005UL + 1442695040888963407UL;
        y[i] = x[i * D] - 0.5 * x[i * D + 1] + 0.3 * (((double)(s >> 11) / 9007199254740992.0) - 0.5);
    }

    RcDataset *ds = NULL;
    if (rc_dataset_new(x, y, N, D, &ds) != RC_STATUS_OK) {
        fprintf(stderr, "dataset: %s\n", rc_last_error_message());
        return 1;
    }
    if (rc_dataset_n(ds) != N || rc_dataset_d(ds) != D) return 2;

    RcOptions opts = rc_options_default();
    opts.statistic = RC_STAT_TCVM;
    opts.method = RC_METHOD_BOOTSTRAP;
    opts.bootstrap_size = 19;
    opts.seed = 5;
    RcResult res;
    RcStatus st = rc_test_mean(ds, RC_MEAN_LINEAR, &opts, &res);
    if (st != RC_STATUS_OK) {
        fprintf(stderr, "test: %d %s\n", (int)st, rc_last_error_message());
        return 3;
    }
    if (!(res.statistic > 0.0) || res.p_value < 0.0 || res.p_value > 1.0 || isnan(res.bandwidth)) return 4;

    opts.statistic = 7;
    if (rc_test_mean(ds, RC_MEAN_LINEAR, &opts, &res) != RC_STATUS_INVALID_INPUT) return 5;
    if (rc_last_error_message() == NULL || strstr(rc_last_error_message(), "statistic") == NULL) return 6;

    rc_dataset_free(ds);
    printf("ok %s %.6f %.4f\n", rc_version(), res.statistic, res.p_value);
    return 0;
}
