/* Elementwise helpers for _core.pyx; restrict lets gcc vectorise them. */
#ifndef SHADOWMAP_ELEMENTWISE_H
#define SHADOWMAP_ELEMENTWISE_H

#include <string.h>

/* every row of X (rows x cols) set to b, or zero when b is NULL */
static inline void ew_fill_rows(double *restrict X, const double *restrict b, int rows, int cols)
{
    if (b == NULL) {
        memset(X, 0, (size_t)rows * cols * sizeof(double));
        return;
    }
    for (int r = 0; r < rows; r++)
        memcpy(X + (size_t)r * cols, b, cols * sizeof(double));
}

/* max(x, 0) that keeps NaN */
static inline void ew_relu(double *restrict X, int count)
{
    for (int q = 0; q < count; q++)
        X[q] = X[q] < 0.0 ? 0.0 : X[q];
}

static inline void ew_relu_mask(double *restrict G, const double *restrict H, int count)
{
    for (int q = 0; q < count; q++)
        G[q] = H[q] > 0.0 ? G[q] : 0.0;
}

static inline void ew_colsum(const double *restrict G, double *restrict out, int rows, int cols)
{
    for (int c = 0; c < cols; c++)
        out[c] = 0.0;
    for (int r = 0; r < rows; r++)
        for (int c = 0; c < cols; c++)
            out[c] += G[(size_t)r * cols + c];
}

#endif
