/*
 * hapitrace writer binding.
 *
 * Five entry points used by generated interposers. All integers are
 * fixed-width; payload bytes follow the little-endian trace encoding.
 */
#ifndef HAPITRACE_WRITER_H
#define HAPITRACE_WRITER_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct hapi_stream hapi_stream;

#define HAPI_MODE_MINIMAL 0
#define HAPI_MODE_DEFAULT 1
#define HAPI_MODE_FULL 2

#define HAPI_EMIT_WRITTEN 0
#define HAPI_EMIT_FILTERED 1
#define HAPI_EMIT_DROPPED 2

/* Opens the process-wide writer on `dir`. Returns 0 on success, <0 on error. */
int hapi_writer_open(const char* dir, const char* registry_json, int mode);

/* Stream of the calling thread; NULL if no writer is open. */
hapi_stream* hapi_stream_acquire(void);

/* Non-blocking. Returns HAPI_EMIT_* or <0 on error (unknown schema, bad payload, closed). */
int hapi_emit(hapi_stream* stream, uint32_t schema_id, uint64_t timestamp_ns,
              const unsigned char* payload, uint32_t len);

/* CLOCK_MONOTONIC nanoseconds. */
uint64_t hapi_clock_now(void);

/* Flushes and finalizes the trace. Returns 0 on success, <0 on error. */
int hapi_writer_close(void);

#ifdef __cplusplus
}
#endif

#endif
