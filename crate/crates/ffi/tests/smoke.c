#include <math.h>
#include <stdio.h>
#include <string.h>

#include "flowsteer.h"

int main(void) {
    double u[3] = {0.5, -1.0, 2.0};
    double z0[3] = {0.1, 0.2, 0.3};
    double x[3] = {0.0, 0.5, 1.0};
    double out[3];
    FsField *field = NULL;
    if (fs_field_new_constant(u, 3, &field) != FS_STATUS_OK) return 1;

    FsCorrectorConfig cfg = fs_corrector_default();
    cfg.kind = FS_CORRECTOR_NONE;
    cfg.m = 0;
    if (fs_sample(field, x, z0, 3, FS_PROMPT_EMPTY, 10, &cfg, out) != FS_STATUS_OK) return 2;
    for (int k = 0; k < 3; k++) {
        if (fabs(out[k] - (z0[k] + u[k])) > 1e-12) return 3;
    }

    cfg.m = 10;
    if (fs_sample(field, x, z0, 3, FS_PROMPT_EMPTY, 10, &cfg, out) != FS_STATUS_INVALID_ARGUMENT) return 4;
    if (strlen(fs_last_error_message()) == 0) return 5;

    double p;
    if (fs_psnr(x, x, NULL, 1, 3, &p) != FS_STATUS_OK || !isinf(p)) return 6;
    fs_field_free(field);
    printf("flowsteer %s ok\n", fs_version());
    return 0;
}
