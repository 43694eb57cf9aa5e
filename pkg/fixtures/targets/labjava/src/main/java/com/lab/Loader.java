package com.lab;

import java.io.ByteArrayInputStream;
import java.io.IOException;
import java.io.InputStream;
import java.io.ObjectInputStream;

public class Loader {
    public static final int MAX_SIZE = 1 << 20;

    public Object load(InputStream in) throws IOException, ClassNotFoundException {
        ObjectInputStream ois = new ObjectInputStream(in);
        return ois.readObject();
    }

    public Object loadBytes(byte[] data) throws IOException, ClassNotFoundException {
        if (data.length > MAX_SIZE) {
            throw new IOException("payload too large");
        }
        return load(new ByteArrayInputStream(data));
    }
}
