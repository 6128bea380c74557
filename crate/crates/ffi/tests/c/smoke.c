#include <math.h>
#include <stdio.h>
#include "porocell.h"

int main(void) {
    PcCell *cell = NULL;
    if (pc_cell_builtin(PC_SHAPE_LAMINATE, 4, 4, 8, 2, &cell) != PC_STATUS_OK) return 1;
    double m = 0.0;
    pc_cell_porosity(cell, &m);
    if (fabs(m - 0.25) > 1e-15) return 2;

    PcSolverOptions opts = {1e-10, 20000, false};
    double b3[9];
    if (pc_solve_b3(cell, &opts, b3) != PC_STATUS_OK) return 3;
    if (fabs(b3[8] - 0.25) > 1e-8) return 4;

    /* bad input sets the last error */
    PcCell *bad = NULL;
    if (pc_cell_builtin(PC_SHAPE_PORE, 4, 4, 4, 9, &bad) != PC_STATUS_INVALID_INPUT) return 5;
    char msg[256];
    if (pc_last_error_message(msg, sizeof msg) <= 1) return 6;

    pc_cell_free(cell);
    printf("ok %s\n", pc_version());
    return 0;
}
