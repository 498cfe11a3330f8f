// CWE-416 use after free.
// Root cause: use_after_free_access and dangling_read touch memory after it was released.

use std::alloc::{alloc, dealloc, Layout};

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
pub extern "C" fn dangling_read(size: usize, offset: usize) -> i32 {
    unsafe {
        let layout = Layout::from_size_align_unchecked(size.max(1), 1);
        let heap = alloc(layout);
        *heap = 7;
        dealloc(heap, layout);
        *heap.add(offset) as i32 // read through a dangling pointer
    }
}

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
