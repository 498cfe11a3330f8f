// CWE-131 incorrect calculation of buffer size.
// Root cause: integer_overflow_allocation sizes a heap block with unchecked arithmetic.

use std::alloc::{alloc, dealloc, Layout};

#[no_mangle]
pub extern "C" fn buffer_overflow_write(buffer: *mut u8, size: usize, offset: usize, value: u8) -> i32 {
    if size == 0 {
        return -1;
    }
    unsafe {
        *buffer.add(offset) = value; // offset never checked against size
    }
    0
}

#[no_mangle]
pub extern "C" fn use_after_free_access(ptr: *mut u8, size: usize) -> i32 {
    unsafe {
        let layout = Layout::from_size_align_unchecked(size, 1);
        dealloc(ptr, layout);
        *ptr = 42; // write after free
    }
    0
}

#[no_mangle]
pub extern "C" fn double_free_trigger(ptr: *mut u8, size: usize) -> i32 {
    unsafe {
        let layout = Layout::from_size_align_unchecked(size.max(1), 1);
        let heap = alloc(layout);
        *heap = *ptr;
        dealloc(heap, layout);
        dealloc(heap, layout); // second free of the same block
    }
    0
}

#[no_mangle]
pub extern "C" fn integer_overflow_allocation(base_size: usize, multiplier: usize) -> i32 {
    unsafe {
        let size = base_size * multiplier; // unchecked: overflow risk
        let layout = Layout::from_size_align_unchecked(size, 8);
        let ptr = alloc(layout);
        *ptr = 0xAA;
        dealloc(ptr, layout);
    }
    0
}
