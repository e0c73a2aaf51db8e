#ifndef STABGEN_H
#define STABGEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum StabgenStatus {
  STABGEN_STATUS_OK = 0,
  // A required pointer argument was null.
  STABGEN_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  STABGEN_STATUS_INVALID_UTF8 = 2,
  // Bad configuration, grid, component id or frequency range.
  STABGEN_STATUS_INVALID_INPUT = 3,
  // I/O or solver failure.
  STABGEN_STATUS_RUNTIME = 4,
  // The caller's buffer cannot hold the result.
  STABGEN_STATUS_BUFFER_TOO_SMALL = 5,
  // Internal panic; the handle involved should be discarded.
  STABGEN_STATUS_PANIC = 6,
} StabgenStatus;

// A loaded grid together with the source it came from.
typedef struct StabgenGrid StabgenGrid;

// Summary of a finished `generate` run.
typedef struct StabgenRun StabgenRun;

// Frequency scan of identical converter units and their aggregate.
typedef struct StabgenScan StabgenScan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or "" if none.
// The pointer stays valid until the next failing call on this thread.
const char *stabgen_last_error(void);

// Engine version as a static NUL-terminated string.
const char *stabgen_version(void);

// Loads a grid from a directory of CSV tables or a built-in fixture name
// ("3bus", "9bus"). A directory wins over a fixture of the same name.
//
// # Safety
// `source` must be a NUL-terminated string and `out` a writable pointer.
enum StabgenStatus stabgen_grid_load(const char *source, struct StabgenGrid **out);

// # Safety
// `grid` must come from [`stabgen_grid_load`] and not be used afterwards.
void stabgen_grid_free(struct StabgenGrid *grid);

// Number of buses, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live grid handle.
size_t stabgen_grid_bus_count(const struct StabgenGrid *grid);

// Number of aggregated generator groups, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live grid handle.
size_t stabgen_grid_group_count(const struct StabgenGrid *grid);

// Runs a full generation from a config file, writing the dataset, metrics,
// tree and manifest to the configured output directory. Honours the
// `STABGEN_WORKERS` environment override like the command-line tool.
//
// # Safety
// `config_path` must be a NUL-terminated string and `out` a writable pointer.
enum StabgenStatus stabgen_generate(const char *config_path, struct StabgenRun **out);

// # Safety
// `run` must come from [`stabgen_generate`] and not be used afterwards.
void stabgen_run_free(struct StabgenRun *run);

// Records written to dataset.csv, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
size_t stabgen_run_record_count(const struct StabgenRun *run);

// Cells in the exploration tree, or 0 for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
size_t stabgen_run_cell_count(const struct StabgenRun *run);

// Hex SHA-256 of dataset.csv, owned by the handle; null for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
const char *stabgen_run_dataset_sha256(const struct StabgenRun *run);

// Output directory, owned by the handle; null for a null handle.
//
// # Safety
// `run` must be null or a live run handle.
const char *stabgen_run_output_dir(const struct StabgenRun *run);

// Scans `units` identical copies of `component` (`GFM_<bus>` or
// `GFL_<bus>`) and their aggregate over `[fmin, fmax]` Hz.
//
// # Safety
// `grid` must be a live grid handle, `component` a NUL-terminated string and
// `out` a writable pointer.
enum StabgenStatus stabgen_scan(const struct StabgenGrid *grid,
                                const char *component,
                                double fmin,
                                double fmax,
                                size_t points_per_decade,
                                size_t units,
                                struct StabgenScan **out);

// # Safety
// `scan` must come from [`stabgen_scan`] and not be used afterwards.
void stabgen_scan_free(struct StabgenScan *scan);

// Number of scan frequencies, or 0 for a null handle.
//
// # Safety
// `scan` must be null or a live scan handle.
size_t stabgen_scan_frequency_count(const struct StabgenScan *scan);

// Largest |Y_agg − Σ Y_i| entry over all frequencies; NaN for a null handle.
//
// # Safety
// `scan` must be null or a live scan handle.
double stabgen_scan_max_deviation(const struct StabgenScan *scan);

// Copies the frequencies into `buf`, which must hold at least
// [`stabgen_scan_frequency_count`] values.
//
// # Safety
// `scan` must be a live scan handle and `buf` writable for `len` doubles.
enum StabgenStatus stabgen_scan_frequencies(const struct StabgenScan *scan,
                                            double *buf,
                                            size_t len);

// Writes the scan as CSV (component, freq_hz, re_y, im_y).
//
// # Safety
// `scan` must be a live scan handle and `path` a NUL-terminated string.
enum StabgenStatus stabgen_scan_write_csv(const struct StabgenScan *scan, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STABGEN_H */
