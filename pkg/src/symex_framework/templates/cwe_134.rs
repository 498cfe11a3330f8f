// CWE-134 use of externally-controlled format string.
// Root cause: format_selector_read indexes the argument table with an attacker-chosen selector.

use std::alloc::{alloc, dealloc, Layout};

#[no_mangle]
pub extern "C" fn format_selector_read(buffer: *mut u8, size: usize, selector: i32) -> i32 {
    let args: [u8; 4] = [1, 2, 3, 4];
    unsafe {
        let arg = *args.as_ptr().add(selector as usize); // selector is not bounded by args.len()
        if size > 0 {
            *buffer = arg;
        }
        arg as i32
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
