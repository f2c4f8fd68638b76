/*
 * Mock Level-Zero-like runtime surface.
 *
 * This header is the single source of truth for the traced function set:
 * the api-model parser reads it, and the C build of the mock runtime
 * compiles against it. Preprocessor lines are skipped by the parser.
 */
#ifndef ZE_MOCK_H
#define ZE_MOCK_H

#include <stddef.h>
#include <stdint.h>

typedef struct _ze_device_handle* ze_device_handle_t;
typedef struct _ze_command_list_handle* ze_command_list_handle_t;
typedef struct _ze_event_handle* ze_event_handle_t;

enum ze_mock_mem_space {
    ZE_MOCK_MEM_HOST = 0,
    ZE_MOCK_MEM_DEVICE = 1
};

struct ze_mock_device_properties {
    void* pNext;
    uint32_t deviceId;
    uint32_t numTiles;
    uint64_t maxMemAllocSize;
    uint32_t coreClockRate;
};

int zeMockInit(uint32_t flags, ze_device_handle_t* phDevice);
int zeMockDeviceGetProperties(ze_device_handle_t hDevice, struct ze_mock_device_properties* pDeviceProperties);
int zeMockMemAlloc(enum ze_mock_mem_space space, size_t size, void** pptr);
int zeMockMemFree(void* ptr);
int zeMockCommandListCreate(ze_device_handle_t hDevice, uint32_t tile, ze_command_list_handle_t* phCommandList);
int zeMockCommandListAppendMemoryCopy(ze_command_list_handle_t hCommandList, void* dstptr, const void* srcptr, size_t size, ze_event_handle_t hSignalEvent, uint32_t numWaitEvents, ze_event_handle_t* phWaitEvents);
int zeMockCommandListAppendLaunchKernel(ze_command_list_handle_t hCommandList, const char* kernelName, uint32_t groupCountX, uint32_t groupCountY, uint32_t groupCountZ, ze_event_handle_t hSignalEvent);
int zeMockCommandListClose(ze_command_list_handle_t hCommandList);
int zeMockCommandListExecute(ze_command_list_handle_t hCommandList);
int zeMockCommandListReset(ze_command_list_handle_t hCommandList);
int zeMockEventCreate(ze_device_handle_t hDevice, ze_event_handle_t* phEvent);
int zeMockEventDestroy(ze_event_handle_t hEvent);
int zeMockEventHostSynchronize(ze_event_handle_t hEvent, uint64_t timeout);

#endif
