#ifndef APNET_H
#define APNET_H

/* C interface to the APNet vocoder engine. Every call returns an apnet_status;
 * on failure apnet_last_error() describes the problem for the calling thread. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define APNET_API __declspec(dllexport)
#else
#define APNET_API __attribute__((visibility("default")))
#endif

typedef enum apnet_status {
  APNET_OK = 0,
  APNET_ERR_USAGE = 1,   /* bad arguments or settings */
  APNET_ERR_DATA = 2,    /* unreadable, malformed or mismatched input, I/O failure */
  APNET_ERR_NUMERIC = 3  /* NaN or Inf during computation */
} apnet_status;

typedef struct apnet_settings apnet_settings;
typedef struct apnet_model apnet_model;

/* Receives one line of text (JSON or CSV, no trailing newline). */
typedef void (*apnet_line_fn)(const char* line, void* user);

APNET_API const char* apnet_version(void);
/* Message of the last failed call on this thread; empty after success. */
APNET_API const char* apnet_last_error(void);

/* Settings: feature, model, training and loss configuration. */
APNET_API apnet_status apnet_settings_new(apnet_settings** out);
APNET_API void apnet_settings_free(apnet_settings* s);
/* Replaces every value with the defaults overlaid by the file. */
APNET_API apnet_status apnet_settings_load(apnet_settings* s, const char* path);
/* "section.key=value"; model.* keys set both predictors. */
APNET_API apnet_status apnet_settings_set(apnet_settings* s, const char* assignment);
APNET_API apnet_status apnet_settings_validate(apnet_settings* s);
/* Copies the settings file text into buf (NUL-terminated, truncated to cap); *needed gets the full size. */
APNET_API apnet_status apnet_settings_text(const apnet_settings* s, char* buf, size_t cap, size_t* needed);

/* Writes mel.apf, logamp.apf and phase.apf for one WAV. */
APNET_API apnet_status apnet_analyze(const apnet_settings* s, const char* wav, const char* out_dir, size_t* frames);

/* Resynthesis from natural log-amplitude and phase. input is a WAV or an analyze directory.
 * *has_snr is set to 1 when *snr_db holds the SNR against an input WAV. */
APNET_API apnet_status apnet_copysynth(const apnet_settings* s, const char* input, const char* out_wav,
                                       size_t* samples, double* snr_db, int* has_snr);

/* Trains on every WAV in corpus_dir. resume may be NULL. Callbacks may be NULL; on_step gets the
 * per-step log line, on_epoch a summary with per-epoch medians of every loss term. */
APNET_API apnet_status apnet_train(const apnet_settings* s, const char* corpus_dir, const char* out_dir,
                                   const char* resume, apnet_line_fn on_step, apnet_line_fn on_epoch, void* user,
                                   long long* steps);

/* Checkpoints. */
APNET_API apnet_status apnet_model_load(const char* path, apnet_model** out);
APNET_API void apnet_model_free(apnet_model* m);
/* JSON object with the model configuration, step and parameter count. */
APNET_API apnet_status apnet_model_info(const apnet_model* m, char* buf, size_t cap, size_t* needed);

/* input is a mel .apf or a WAV; the checkpoint's configuration is used and must match the settings. */
APNET_API apnet_status apnet_synthesize(const apnet_model* m, const apnet_settings* s, const char* input,
                                        const char* out_wav, size_t* frames, size_t* samples);

/* mel is frames x mel_dim, row-major; out receives frames * frame_shift samples. */
APNET_API apnet_status apnet_synthesize_mel(const apnet_model* m, const double* mel, size_t frames, size_t mel_dim,
                                            double* out, size_t out_cap, size_t* written);

/* Inspects the synthesis graph for `frames` frames: *ok is 1 when no tensor before the ISTFT
 * runs longer than `frames` on its time axis. */
APNET_API apnet_status apnet_frame_level_check(const apnet_model* m, size_t frames, int* ok, size_t* max_extent,
                                               size_t* nodes_checked);

/* Objective metrics of test against ref (equal lengths). */
APNET_API apnet_status apnet_compare(const apnet_settings* s, const double* ref, const double* test, size_t n,
                                     double* snr_db, double* las_rmse_db, double* mcd_db);

/* Evaluates ref_dir against syn_dir (model NULL) or against the model's synthesis (syn_dir NULL).
 * on_row receives the CSV header, one row per clip and the mean row. jsonl_path may be NULL. */
APNET_API apnet_status apnet_eval(const apnet_settings* s, const char* ref_dir, const char* syn_dir,
                                  const apnet_model* model, int threads, const char* jsonl_path,
                                  apnet_line_fn on_row, apnet_line_fn on_warning, void* user, size_t* evaluated,
                                  size_t* skipped);

/* Real-time factor of synthesizing `seconds` of synthetic mel input, once per thread count. */
APNET_API apnet_status apnet_bench(const apnet_model* m, double seconds, const int* thread_counts, size_t count,
                                   unsigned long long seed, double* rtf, double* wall_seconds);

#ifdef __cplusplus
}
#endif

#endif
